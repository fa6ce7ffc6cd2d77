use thiserror::Error;

/// Errors raised by the fitting, testing and linear-algebra routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CdrError {
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("singular matrix: {0}")]
    SingularMatrix(String),
    #[error("rank-deficient input: {0}")]
    RankDeficient(String),
    #[error("invalid gamma: n_x - gamma * n_y = {0} must be positive")]
    InvalidGamma(f64),
    #[error("degenerate spectrum at component {component}: {value} < 0 under the square root")]
    DegenerateSpectrum { component: usize, value: f64 },
    #[error("grid is not uniformly spaced")]
    UnsupportedGrid,
    #[error("response is constant; slicing is undefined")]
    DegenerateResponse,
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("at least 4 features are required, got {0}")]
    InsufficientFeatures(usize),
    #[error("unsupported size: {0}")]
    UnsupportedSize(String),
}

pub type Result<T> = std::result::Result<T, CdrError>;
