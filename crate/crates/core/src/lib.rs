//! Numerical engine for the stochastic difference equation
//! `lambda_k = mu_k * phi(lambda_{k-1})` on R^d.
//!
//! The crate is organized around five layers:
//!
//! - [`spectral`]: the drift map, its contraction subspace and covariance series;
//! - [`measure`]: the algebra of one-step noise laws (pushforward, convolution,
//!   log moments, coset-support tests, seeded sampling);
//! - [`process`]: bi-infinite noise processes as finite windows plus analytic
//!   tail rules, three-series path checks and the deterministic shift recursion;
//! - [`solver`]: existence analysis, fundamental-solution construction, the
//!   extremal family and solution verification;
//! - [`mc`]: Monte Carlo path simulation, backward partial-product samplers and
//!   two-sample distributional tests.

pub mod error;
pub mod mc;
pub mod measure;
pub mod process;
pub mod rng;
pub mod solver;
pub mod spectral;

pub use error::CoreError;
