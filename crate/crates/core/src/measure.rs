//! The algebra of one-step noise laws: construction, pushforward, convolution,
//! symmetrization, coset-support tests, logarithmic moments and seeded
//! sampling.
//!
//! Closed forms are preferred wherever the tag combination admits them
//! (Gaussian/Dirac algebra); seeded sampling is the universal fallback.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::spectral::{ContractionSplit, LinearMap};

/// A one-time-step noise law on R^d.
///
/// `Convolution` is the structural composite returned by [`convolve`] when no
/// closed form applies; it samples as the sum of independent draws from its
/// components.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "wire::WireModel", into = "wire::WireModel")]
pub enum NoiseModel {
    Dirac {
        point: DVector<f64>,
    },
    Gaussian {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    },
    UniformBox {
        lo: DVector<f64>,
        hi: DVector<f64>,
    },
    Mixture {
        weights: Vec<f64>,
        components: Vec<NoiseModel>,
    },
    Shifted {
        base: Box<NoiseModel>,
        offset: DVector<f64>,
    },
    Pushforward {
        map: Box<LinearMap>,
        base: Box<NoiseModel>,
    },
    SampleCloud {
        points: DMatrix<f64>,
    },
    Convolution {
        components: Vec<NoiseModel>,
    },
}

impl NoiseModel {
    pub fn dirac(point: DVector<f64>) -> Self {
        NoiseModel::Dirac { point }
    }

    pub fn dirac_zero(dim: usize) -> Self {
        NoiseModel::Dirac {
            point: DVector::zeros(dim),
        }
    }

    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(CoreError::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        let sym = 0.5 * (&cov + cov.transpose());
        let min_eig = sym
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 * cov.norm().max(1.0) {
            return Err(CoreError::Input(format!(
                "gaussian covariance is not PSD (min eigenvalue {min_eig})"
            )));
        }
        Ok(NoiseModel::Gaussian { mean, cov: sym })
    }

    pub fn uniform_box(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(CoreError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(hi.iter()).any(|(a, b)| a > b) {
            return Err(CoreError::Input("uniform box requires lo <= hi".into()));
        }
        Ok(NoiseModel::UniformBox { lo, hi })
    }

    pub fn mixture(weights: Vec<f64>, components: Vec<NoiseModel>) -> Result<Self> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(CoreError::Input(
                "mixture weights and components must be nonempty and equal-length".into(),
            ));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(CoreError::Input("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CoreError::Input(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(CoreError::Input("mixture components disagree on dimension".into()));
        }
        Ok(NoiseModel::Mixture {
            weights,
            components,
        })
    }

    pub fn sample_cloud(points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(CoreError::Input("sample cloud must be nonempty".into()));
        }
        Ok(NoiseModel::SampleCloud { points })
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseModel::Dirac { point } => point.len(),
            NoiseModel::Gaussian { mean, .. } => mean.len(),
            NoiseModel::UniformBox { lo, .. } => lo.len(),
            NoiseModel::Mixture { components, .. } => components[0].dim(),
            NoiseModel::Shifted { base, .. } => base.dim(),
            NoiseModel::Pushforward { map, .. } => map.dim(),
            NoiseModel::SampleCloud { points } => points.ncols(),
            NoiseModel::Convolution { components } => components[0].dim(),
        }
    }

    /// Closed-form mean when the structure admits one.
    pub fn mean(&self) -> Option<DVector<f64>> {
        match self {
            NoiseModel::Dirac { point } => Some(point.clone()),
            NoiseModel::Gaussian { mean, .. } => Some(mean.clone()),
            NoiseModel::UniformBox { lo, hi } => Some(0.5 * (lo + hi)),
            NoiseModel::Mixture {
                weights,
                components,
            } => {
                let mut m = DVector::zeros(self.dim());
                for (w, c) in weights.iter().zip(components) {
                    m += *w * c.mean()?;
                }
                Some(m)
            }
            NoiseModel::Shifted { base, offset } => Some(base.mean()? + offset),
            NoiseModel::Pushforward { map, base } => Some(map.matrix() * base.mean()?),
            NoiseModel::SampleCloud { points } => {
                let n = points.nrows() as f64;
                Some(DVector::from_fn(points.ncols(), |j, _| {
                    points.column(j).sum() / n
                }))
            }
            NoiseModel::Convolution { components } => {
                let mut m = DVector::zeros(self.dim());
                for c in components {
                    m += c.mean()?;
                }
                Some(m)
            }
        }
    }

    /// Closed-form covariance when the structure admits one.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let d = self.dim();
        match self {
            NoiseModel::Dirac { .. } => Some(DMatrix::zeros(d, d)),
            NoiseModel::Gaussian { cov, .. } => Some(cov.clone()),
            NoiseModel::UniformBox { lo, hi } => Some(DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    let w = hi[i] - lo[i];
                    w * w / 12.0
                } else {
                    0.0
                }
            })),
            NoiseModel::Mixture {
                weights,
                components,
            } => {
                let mean = self.mean()?;
                let mut second = DMatrix::zeros(d, d);
                for (w, c) in weights.iter().zip(components) {
                    let cm = c.mean()?;
                    second += *w * (c.covariance()? + &cm * cm.transpose());
                }
                Some(second - &mean * mean.transpose())
            }
            NoiseModel::Shifted { base, .. } => base.covariance(),
            NoiseModel::Pushforward { map, base } => {
                Some(map.matrix() * base.covariance()? * map.matrix().transpose())
            }
            NoiseModel::SampleCloud { points } => {
                let n = points.nrows();
                if n < 2 {
                    return Some(DMatrix::zeros(d, d));
                }
                let mean = self.mean()?;
                let mut cov = DMatrix::zeros(d, d);
                for r in 0..n {
                    let x = points.row(r).transpose() - &mean;
                    cov += &x * x.transpose();
                }
                Some(cov / (n as f64 - 1.0))
            }
            NoiseModel::Convolution { components } => {
                let mut cov = DMatrix::zeros(d, d);
                for c in components {
                    cov += c.covariance()?;
                }
                Some(cov)
            }
        }
    }

    /// Closed-form Gaussian parameters when the law is exactly Gaussian
    /// (Dirac counts as a degenerate Gaussian).
    pub fn as_gaussian(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let d = self.dim();
        match self {
            NoiseModel::Dirac { point } => Some((point.clone(), DMatrix::zeros(d, d))),
            NoiseModel::Gaussian { mean, cov } => Some((mean.clone(), cov.clone())),
            NoiseModel::Shifted { base, offset } => {
                let (m, c) = base.as_gaussian()?;
                Some((m + offset, c))
            }
            NoiseModel::Pushforward { map, base } => {
                let (m, c) = base.as_gaussian()?;
                Some((
                    map.matrix() * m,
                    map.matrix() * c * map.matrix().transpose(),
                ))
            }
            NoiseModel::Convolution { components } => {
                let mut mean = DVector::zeros(d);
                let mut cov = DMatrix::zeros(d, d);
                for c in components {
                    let (m, a) = c.as_gaussian()?;
                    mean += m;
                    cov += a;
                }
                Some((mean, cov))
            }
            NoiseModel::Mixture { components, .. } if components.len() == 1 => {
                components[0].as_gaussian()
            }
            _ => None,
        }
    }

    /// A bound `R` with `|X| <= R` almost surely, when the support is bounded.
    pub fn support_bound(&self) -> Option<f64> {
        match self {
            NoiseModel::Dirac { point } => Some(point.norm()),
            NoiseModel::Gaussian { cov, .. } => {
                if cov.norm() == 0.0 {
                    self.mean().map(|m| m.norm())
                } else {
                    None
                }
            }
            NoiseModel::UniformBox { lo, hi } => {
                let mut r2 = 0.0;
                for i in 0..lo.len() {
                    let m = lo[i].abs().max(hi[i].abs());
                    r2 += m * m;
                }
                Some(r2.sqrt())
            }
            NoiseModel::Mixture { components, .. } => components
                .iter()
                .map(|c| c.support_bound())
                .try_fold(0.0f64, |acc, b| b.map(|b| acc.max(b))),
            NoiseModel::Shifted { base, offset } => {
                Some(base.support_bound()? + offset.norm())
            }
            NoiseModel::Pushforward { map, base } => {
                let svd = map.matrix().clone().svd(false, false);
                let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
                Some(smax * base.support_bound()?)
            }
            NoiseModel::SampleCloud { points } => Some(
                (0..points.nrows())
                    .map(|r| points.row(r).norm())
                    .fold(0.0, f64::max),
            ),
            NoiseModel::Convolution { components } => components
                .iter()
                .map(|c| c.support_bound())
                .try_fold(0.0f64, |acc, b| b.map(|b| acc + b)),
        }
    }

    fn shifted(self, offset: DVector<f64>) -> NoiseModel {
        if offset.norm() == 0.0 {
            return self;
        }
        match self {
            NoiseModel::Dirac { point } => NoiseModel::Dirac {
                point: point + offset,
            },
            NoiseModel::Gaussian { mean, cov } => NoiseModel::Gaussian {
                mean: mean + offset,
                cov,
            },
            NoiseModel::UniformBox { lo, hi } => NoiseModel::UniformBox {
                lo: lo + &offset,
                hi: hi + offset,
            },
            NoiseModel::Shifted { base, offset: o } => NoiseModel::Shifted {
                base,
                offset: o + offset,
            },
            NoiseModel::SampleCloud { mut points } => {
                for r in 0..points.nrows() {
                    for c in 0..points.ncols() {
                        points[(r, c)] += offset[c];
                    }
                }
                NoiseModel::SampleCloud { points }
            }
            other => NoiseModel::Shifted {
                base: Box::new(other),
                offset,
            },
        }
    }
}

/// Image measure of a model under a linear map (`T(nu)(E) = nu(T^{-1} E)`).
pub fn pushforward(model: &NoiseModel, map: &LinearMap) -> Result<NoiseModel> {
    if model.dim() != map.dim() {
        return Err(CoreError::DimensionMismatch {
            expected: map.dim(),
            got: model.dim(),
        });
    }
    Ok(match model {
        NoiseModel::Dirac { point } => NoiseModel::Dirac {
            point: map.matrix() * point,
        },
        NoiseModel::Gaussian { mean, cov } => NoiseModel::Gaussian {
            mean: map.matrix() * mean,
            cov: map.matrix() * cov * map.matrix().transpose(),
        },
        NoiseModel::UniformBox { lo, hi } => {
            let m = map.matrix();
            let diagonal = (0..map.dim())
                .all(|i| (0..map.dim()).all(|j| i == j || m[(i, j)] == 0.0));
            if diagonal {
                let mut nlo = DVector::zeros(lo.len());
                let mut nhi = DVector::zeros(lo.len());
                for i in 0..lo.len() {
                    let (a, b) = (m[(i, i)] * lo[i], m[(i, i)] * hi[i]);
                    nlo[i] = a.min(b);
                    nhi[i] = a.max(b);
                }
                NoiseModel::UniformBox { lo: nlo, hi: nhi }
            } else {
                NoiseModel::Pushforward {
                    map: Box::new(map.clone()),
                    base: Box::new(model.clone()),
                }
            }
        }
        NoiseModel::Mixture {
            weights,
            components,
        } => NoiseModel::Mixture {
            weights: weights.clone(),
            components: components
                .iter()
                .map(|c| pushforward(c, map))
                .collect::<Result<_>>()?,
        },
        NoiseModel::Shifted { base, offset } => {
            pushforward(base, map)?.shifted(map.matrix() * offset)
        }
        NoiseModel::Pushforward { map: inner, base } => {
            // Structural normalization: nested pushforwards collapse.
            let composed = map.compose(inner)?;
            pushforward(base, &composed)?
        }
        NoiseModel::SampleCloud { points } => {
            let mapped = points * map.matrix().transpose();
            NoiseModel::SampleCloud { points: mapped }
        }
        NoiseModel::Convolution { components } => NoiseModel::Convolution {
            components: components
                .iter()
                .map(|c| pushforward(c, map))
                .collect::<Result<_>>()?,
        },
    })
}

/// Convolution of two laws; closed form where available, otherwise a
/// composite that samples as the sum of independent draws.
pub fn convolve(a: &NoiseModel, b: &NoiseModel) -> Result<NoiseModel> {
    if a.dim() != b.dim() {
        return Err(CoreError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(match (a, b) {
        (NoiseModel::Dirac { point }, other) => other.clone().shifted(point.clone()),
        (other, NoiseModel::Dirac { point }) => other.clone().shifted(point.clone()),
        (
            NoiseModel::Gaussian { mean: m1, cov: c1 },
            NoiseModel::Gaussian { mean: m2, cov: c2 },
        ) => NoiseModel::Gaussian {
            mean: m1 + m2,
            cov: c1 + c2,
        },
        (NoiseModel::Convolution { components }, other) => {
            let mut comps = components.clone();
            comps.push(other.clone());
            NoiseModel::Convolution { components: comps }
        }
        (other, NoiseModel::Convolution { components }) => {
            let mut comps = vec![other.clone()];
            comps.extend(components.iter().cloned());
            NoiseModel::Convolution { components: comps }
        }
        (x, y) => NoiseModel::Convolution {
            components: vec![x.clone(), y.clone()],
        },
    })
}

/// Reflection `nu_check(E) = nu(-E)`.
pub fn negate(model: &NoiseModel) -> Result<NoiseModel> {
    let d = model.dim();
    let neg = LinearMap::new(-DMatrix::<f64>::identity(d, d))?;
    pushforward(model, &neg)
}

/// Symmetrization `mu * mu_check`; always a symmetric law with mean zero.
pub fn symmetrize(model: &NoiseModel) -> Result<NoiseModel> {
    match model {
        NoiseModel::Dirac { point } => Ok(NoiseModel::dirac_zero(point.len())),
        NoiseModel::Gaussian { mean, cov } => Ok(NoiseModel::Gaussian {
            mean: DVector::zeros(mean.len()),
            cov: 2.0 * cov,
        }),
        NoiseModel::Shifted { base, .. } => symmetrize(base),
        other => convolve(other, &negate(other)?),
    }
}

/// How a logarithmic-moment value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogMomentMethod {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

/// Estimate of `E[log(|V| + 1)]` with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogMomentReport {
    /// The estimate; `f64::INFINITY` flags heuristic blow-up.
    pub value: f64,
    pub std_error: f64,
    pub method: LogMomentMethod,
    pub n_used: usize,
    pub seed: u64,
}

impl LogMomentReport {
    pub fn finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// Adaptive Simpson quadrature on [a, b].
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
        let m = 0.5 * (a + b);
        (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, m, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, right, tol / 2.0, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    recurse(f, a, b, simpson(f, a, b), tol, 48)
}

/// Heuristic blow-up threshold: a Monte Carlo estimate above this is reported
/// as infinite ("undetermined, evidence of divergence").
const LOG_MOMENT_BLOWUP: f64 = 1e6;

/// Logarithmic moment `E[log(|V| + 1)]` of a law: closed form for point
/// masses, quadrature for 1-d boxes, Monte Carlo otherwise.
pub fn log_moment(model: &NoiseModel, n: usize, seed: u64) -> Result<LogMomentReport> {
    match model {
        NoiseModel::Dirac { point } => Ok(LogMomentReport {
            value: (point.norm() + 1.0).ln(),
            std_error: 0.0,
            method: LogMomentMethod::ClosedForm,
            n_used: 0,
            seed,
        }),
        NoiseModel::UniformBox { lo, hi } if lo.len() == 1 => {
            let (a, b) = (lo[0], hi[0]);
            let value = if a == b {
                (a.abs() + 1.0).ln()
            } else {
                adaptive_simpson(&|t: f64| (t.abs() + 1.0).ln(), a, b, 1e-12) / (b - a)
            };
            Ok(LogMomentReport {
                value,
                std_error: 0.0,
                method: LogMomentMethod::Quadrature,
                n_used: 0,
                seed,
            })
        }
        NoiseModel::Mixture {
            weights,
            components,
        } => {
            let mut value = 0.0;
            let mut var = 0.0;
            let mut n_used = 0;
            let mut method = LogMomentMethod::ClosedForm;
            for (i, (w, c)) in weights.iter().zip(components).enumerate() {
                let r = log_moment(c, n, derive_seed(seed, &[i as u64]))?;
                if !r.value.is_finite() {
                    return Ok(LogMomentReport {
                        value: f64::INFINITY,
                        std_error: 0.0,
                        method: r.method,
                        n_used: r.n_used,
                        seed,
                    });
                }
                value += w * r.value;
                var += (w * r.std_error) * (w * r.std_error);
                n_used += r.n_used;
                if r.method != LogMomentMethod::ClosedForm {
                    method = r.method;
                }
            }
            Ok(LogMomentReport {
                value,
                std_error: var.sqrt(),
                method,
                n_used,
                seed,
            })
        }
        _ => {
            if n < 1 {
                return Err(CoreError::Precondition(
                    "monte carlo log moment requires n >= 1".into(),
                ));
            }
            let pts = sample(model, n, seed)?;
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for r in 0..n {
                let v = (pts.row(r).norm() + 1.0).ln();
                sum += v;
                sum2 += v * v;
            }
            let mean = sum / n as f64;
            let var = (sum2 / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            let value = if mean > LOG_MOMENT_BLOWUP {
                f64::INFINITY
            } else {
                mean
            };
            Ok(LogMomentReport {
                value,
                std_error: se,
                method: LogMomentMethod::MonteCarlo,
                n_used: n,
                seed,
            })
        }
    }
}

/// Outcome of a coset-support test.
#[derive(Debug, Clone)]
pub struct CosetReport {
    pub in_coset: bool,
    /// Complement component `u` when supported on `u + C(phi)`.
    pub offset: DVector<f64>,
    pub certificate: String,
}

/// Absolute tolerance for coset membership on complement components.
pub const COSET_TOL: f64 = 1e-8;

/// Decide whether the law is supported on a coset `u + C(phi)` and return the
/// complement component `u`.
pub fn support_coset(model: &NoiseModel, split: &ContractionSplit) -> Result<CosetReport> {
    let d = split.dim();
    if model.dim() != d {
        return Err(CoreError::DimensionMismatch {
            expected: d,
            got: model.dim(),
        });
    }
    let q = DMatrix::<f64>::identity(d, d) - &split.projector;
    let fail = |why: &str| CosetReport {
        in_coset: false,
        offset: DVector::zeros(d),
        certificate: why.to_string(),
    };
    Ok(match model {
        NoiseModel::Dirac { point } => CosetReport {
            in_coset: true,
            offset: &q * point,
            certificate: "point mass".into(),
        },
        NoiseModel::Gaussian { mean, cov } => {
            let leak = (&q * cov * q.transpose()).norm();
            if leak <= COSET_TOL * cov.norm().max(1.0) {
                CosetReport {
                    in_coset: true,
                    offset: &q * mean,
                    certificate: format!("covariance leak {leak:.3e} within tolerance"),
                }
            } else {
                fail(&format!("covariance leaks into complement ({leak:.3e})"))
            }
        }
        NoiseModel::UniformBox { lo, hi } => {
            for i in 0..d {
                if hi[i] > lo[i] {
                    let axis = DVector::from_fn(d, |r, _| if r == i { 1.0 } else { 0.0 });
                    if (&q * axis).norm() > COSET_TOL {
                        return Ok(fail(&format!(
                            "non-degenerate axis {i} leaves the contraction subspace"
                        )));
                    }
                }
            }
            CosetReport {
                in_coset: true,
                offset: &q * (0.5 * (lo + hi)),
                certificate: "all non-degenerate axes inside the contraction subspace".into(),
            }
        }
        NoiseModel::Mixture { components, .. } => {
            let mut offset: Option<DVector<f64>> = None;
            for c in components {
                let r = support_coset(c, split)?;
                if !r.in_coset {
                    return Ok(fail("mixture component outside any coset"));
                }
                match &offset {
                    None => offset = Some(r.offset),
                    Some(u) => {
                        if (u - &r.offset).norm() > COSET_TOL {
                            return Ok(fail("mixture components on different cosets"));
                        }
                    }
                }
            }
            CosetReport {
                in_coset: true,
                offset: offset.unwrap_or_else(|| DVector::zeros(d)),
                certificate: "all mixture components share the complement component".into(),
            }
        }
        NoiseModel::Shifted { base, offset } => {
            let mut r = support_coset(base, split)?;
            if r.in_coset {
                r.offset += &q * offset;
            }
            r
        }
        NoiseModel::SampleCloud { points } => {
            let first = &q * points.row(0).transpose();
            for r in 1..points.nrows() {
                let u = &q * points.row(r).transpose();
                if (&u - &first).norm() > COSET_TOL {
                    return Ok(fail("sample points on different cosets"));
                }
            }
            CosetReport {
                in_coset: true,
                offset: first,
                certificate: "all sample points share the complement component".into(),
            }
        }
        NoiseModel::Convolution { components } => {
            let mut offset = DVector::zeros(d);
            for c in components {
                let r = support_coset(c, split)?;
                if !r.in_coset {
                    return Ok(fail("convolution factor outside any coset"));
                }
                offset += r.offset;
            }
            CosetReport {
                in_coset: true,
                offset,
                certificate: "sum of factor complement components".into(),
            }
        }
        NoiseModel::Pushforward { .. } => fail("unsupported structure"),
    })
}

fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = cov.clone().symmetric_eigen();
    let d = cov.nrows();
    let mut l = DMatrix::zeros(d, d);
    for j in 0..d {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..d {
            l[(i, j)] = eig.eigenvectors[(i, j)] * s;
        }
    }
    l
}

fn sample_into<R: Rng>(model: &NoiseModel, rng: &mut R, out: &mut [f64]) {
    let d = model.dim();
    match model {
        NoiseModel::Dirac { point } => {
            for i in 0..d {
                out[i] = point[i];
            }
        }
        NoiseModel::Gaussian { mean, cov } => {
            // Factor recomputed per draw would be wasteful; handled by the
            // cached path in `sample`.  This fallback is for composite use.
            let l = psd_factor(cov);
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
            let x = mean + l * z;
            for i in 0..d {
                out[i] = x[i];
            }
        }
        NoiseModel::UniformBox { lo, hi } => {
            for i in 0..d {
                out[i] = if hi[i] > lo[i] {
                    rng.random_range(lo[i]..hi[i])
                } else {
                    lo[i]
                };
            }
        }
        NoiseModel::Mixture {
            weights,
            components,
        } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = components.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            sample_into(&components[chosen], rng, out);
        }
        NoiseModel::Shifted { base, offset } => {
            sample_into(base, rng, out);
            for i in 0..d {
                out[i] += offset[i];
            }
        }
        NoiseModel::Pushforward { map, base } => {
            let mut tmp = vec![0.0; d];
            sample_into(base, rng, &mut tmp);
            let m = map.matrix();
            for i in 0..d {
                let mut s = 0.0;
                for j in 0..d {
                    s += m[(i, j)] * tmp[j];
                }
                out[i] = s;
            }
        }
        NoiseModel::SampleCloud { points } => {
            let r = rng.random_range(0..points.nrows());
            for i in 0..d {
                out[i] = points[(r, i)];
            }
        }
        NoiseModel::Convolution { components } => {
            let mut tmp = vec![0.0; d];
            for i in 0..d {
                out[i] = 0.0;
            }
            for c in components {
                sample_into(c, rng, &mut tmp);
                for i in 0..d {
                    out[i] += tmp[i];
                }
            }
        }
    }
}

/// Draw a single sample into `out` from a caller-owned RNG stream.  Used by
/// path simulation where many laws interleave on one stream.
pub fn draw_one<R: Rng>(model: &NoiseModel, rng: &mut R, out: &mut [f64]) {
    sample_into(model, rng, out);
}

/// Draw `n` i.i.d. samples (rows) from the law; deterministic in
/// `(model, n, seed)`.
pub fn sample(model: &NoiseModel, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n < 1 {
        return Err(CoreError::Precondition("sample requires n >= 1".into()));
    }
    let d = model.dim();
    let mut rng = rng_from_seed(seed);
    let mut out = DMatrix::<f64>::zeros(n, d);
    // Fast path for a plain Gaussian: factor once.
    if let NoiseModel::Gaussian { mean, cov } = model {
        let l = psd_factor(cov);
        for r in 0..n {
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let x = mean + &l * z;
            for i in 0..d {
                out[(r, i)] = x[i];
            }
        }
        return Ok(out);
    }
    let mut buf = vec![0.0; d];
    for r in 0..n {
        sample_into(model, &mut rng, &mut buf);
        for i in 0..d {
            out[(r, i)] = buf[i];
        }
    }
    Ok(out)
}

mod wire {
    //! Plain-vector mirror of [`NoiseModel`] used for the canonical
    //! structured-text serialization (configs and reports).

    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
    pub enum WireModel {
        Dirac {
            point: Vec<f64>,
        },
        Gaussian {
            mean: Vec<f64>,
            cov: Vec<Vec<f64>>,
        },
        UniformBox {
            lo: Vec<f64>,
            hi: Vec<f64>,
        },
        Mixture {
            weights: Vec<f64>,
            components: Vec<WireModel>,
        },
        Shifted {
            base: Box<WireModel>,
            offset: Vec<f64>,
        },
        Pushforward {
            map: Vec<Vec<f64>>,
            base: Box<WireModel>,
        },
        SampleCloud {
            points: Vec<Vec<f64>>,
        },
        Convolution {
            components: Vec<WireModel>,
        },
    }

    fn vec_to_dvector(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn rows_to_dmatrix(rows: &[Vec<f64>]) -> std::result::Result<DMatrix<f64>, String> {
        if rows.is_empty() {
            return Err("empty matrix literal".into());
        }
        let c = rows[0].len();
        if rows.iter().any(|r| r.len() != c) {
            return Err("ragged matrix literal".into());
        }
        Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
    }

    fn dmatrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    }

    impl TryFrom<WireModel> for NoiseModel {
        type Error = String;

        fn try_from(w: WireModel) -> std::result::Result<Self, String> {
            Ok(match w {
                WireModel::Dirac { point } => NoiseModel::dirac(vec_to_dvector(&point)),
                WireModel::Gaussian { mean, cov } => {
                    NoiseModel::gaussian(vec_to_dvector(&mean), rows_to_dmatrix(&cov)?)
                        .map_err(|e| e.to_string())?
                }
                WireModel::UniformBox { lo, hi } => {
                    NoiseModel::uniform_box(vec_to_dvector(&lo), vec_to_dvector(&hi))
                        .map_err(|e| e.to_string())?
                }
                WireModel::Mixture {
                    weights,
                    components,
                } => NoiseModel::mixture(
                    weights,
                    components
                        .into_iter()
                        .map(NoiseModel::try_from)
                        .collect::<std::result::Result<_, _>>()?,
                )
                .map_err(|e| e.to_string())?,
                WireModel::Shifted { base, offset } => NoiseModel::Shifted {
                    base: Box::new(NoiseModel::try_from(*base)?),
                    offset: vec_to_dvector(&offset),
                },
                WireModel::Pushforward { map, base } => NoiseModel::Pushforward {
                    map: Box::new(
                        LinearMap::new(rows_to_dmatrix(&map)?).map_err(|e| e.to_string())?,
                    ),
                    base: Box::new(NoiseModel::try_from(*base)?),
                },
                WireModel::SampleCloud { points } => {
                    NoiseModel::sample_cloud(rows_to_dmatrix(&points)?)
                        .map_err(|e| e.to_string())?
                }
                WireModel::Convolution { components } => {
                    let comps: Vec<NoiseModel> = components
                        .into_iter()
                        .map(NoiseModel::try_from)
                        .collect::<std::result::Result<_, _>>()?;
                    if comps.is_empty() {
                        return Err("empty convolution".into());
                    }
                    NoiseModel::Convolution { components: comps }
                }
            })
        }
    }

    impl From<NoiseModel> for WireModel {
        fn from(m: NoiseModel) -> WireModel {
            match m {
                NoiseModel::Dirac { point } => WireModel::Dirac {
                    point: point.iter().cloned().collect(),
                },
                NoiseModel::Gaussian { mean, cov } => WireModel::Gaussian {
                    mean: mean.iter().cloned().collect(),
                    cov: dmatrix_to_rows(&cov),
                },
                NoiseModel::UniformBox { lo, hi } => WireModel::UniformBox {
                    lo: lo.iter().cloned().collect(),
                    hi: hi.iter().cloned().collect(),
                },
                NoiseModel::Mixture {
                    weights,
                    components,
                } => WireModel::Mixture {
                    weights,
                    components: components.into_iter().map(WireModel::from).collect(),
                },
                NoiseModel::Shifted { base, offset } => WireModel::Shifted {
                    base: Box::new(WireModel::from(*base)),
                    offset: offset.iter().cloned().collect(),
                },
                NoiseModel::Pushforward { map, base } => WireModel::Pushforward {
                    map: dmatrix_to_rows(map.matrix()),
                    base: Box::new(WireModel::from(*base)),
                },
                NoiseModel::SampleCloud { points } => WireModel::SampleCloud {
                    points: dmatrix_to_rows(&points),
                },
                NoiseModel::Convolution { components } => WireModel::Convolution {
                    components: components.into_iter().map(WireModel::from).collect(),
                },
            }
        }
    }
}
