use thiserror::Error;

/// Errors raised by the recovery library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimension(String),

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("columns are not orthonormal (Gram deviation {0:.3e})")]
    NonOrthonormal(f64),

    #[error("reference matrix has zero Frobenius norm")]
    ZeroReference,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("iteration limit reached after {iterations} iterations (relative residual {residual:.3e})")]
    IterationLimit { iterations: usize, residual: f64 },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("oracle budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("IRLS iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
