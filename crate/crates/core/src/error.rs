use thiserror::Error;

/// Errors produced by the numerical engine.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("spectral gap violation: eigenvalue modulus {modulus} within {tol} of the unit circle")]
    SpectralGapViolation { modulus: f64, tol: f64 },

    #[error("the map is singular but the operation requires invertibility: {0}")]
    SingularMap(String),

    #[error("no stationary fixed point: spectral radius {0} >= 1 outside the supported subspace")]
    NoStationaryFixedPoint(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("window too short: {0}")]
    WindowTooShort(String),

    #[error("no empirical convergence at horizon {0}")]
    NoEmpiricalConvergence(usize),

    #[error("internal consistency: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
