use thiserror::Error;

/// Errors raised by the numerical core and the experiment drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("unsupported Bessel order {0}; supported orders are non-negative integers and half-integers")]
    UnsupportedOrder(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("design must contain at least one location")]
    EmptyDesign,
    #[error("grid design requires a perfect square, got n = {0}")]
    NotPerfectSquare(usize),
    #[error("matrix is not positive definite (jitter escalated to {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("singular design matrix: {0}")]
    SingularDesign(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that originate in numerical routines rather than in
    /// bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::Calibration(_) | Error::SingularDesign(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
