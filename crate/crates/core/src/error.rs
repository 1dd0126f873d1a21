use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("value {value} is outside the domain of the {transform} transform")]
    TransformDomain { transform: &'static str, value: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular triangular factor")]
    SingularFactor,

    #[error("quadrature box too small: {0}")]
    QuadratureBox(String),

    #[error("input axis is not equispaced")]
    NonEquispaced,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("model file format version mismatch: expected {expected}, found {found}")]
    Version { expected: String, found: String },

    #[error("corrupt model file: {0}")]
    ModelFile(String),

    #[error("optimisation failed: {0}")]
    Optimisation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
