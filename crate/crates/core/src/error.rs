use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OuError {
    #[error("drift matrix is not Hurwitz (margin {margin:e})")]
    NotHurwitz { margin: f64 },
    #[error("covariance matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("quadrature did not converge: {0}")]
    NonConvergence(String),
    #[error("polar coordinates are undefined at the origin")]
    ZeroPoint,
    #[error("bracketing failed: {0}")]
    BracketFailure(String),
    #[error("argument outside the half-plane Re > 0: {0}")]
    DomainError(String),
    #[error("kernel requested on the diagonal x = u")]
    DiagonalPoint,
    #[error("out of regime: {0}")]
    OutOfRegime(String),
    #[error("ambiguous eigenvalue clustering: {0}")]
    DefectiveStructureTolerance(String),
    #[error("point outside the cover domain: {0}")]
    OutOfDomain(String),
    #[error("ball cover does not cover the probe set: {0}")]
    CoverageFailure(String),
    #[error("sign of the time derivative is ambiguous: {0}")]
    SignAmbiguity(String),
    #[error("Monte Carlo budget too small: {0}")]
    BudgetTooSmall(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, OuError>;

impl From<std::io::Error> for OuError {
    fn from(e: std::io::Error) -> Self {
        OuError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for OuError {
    fn from(e: serde_json::Error) -> Self {
        OuError::InvalidConfig(e.to_string())
    }
}
