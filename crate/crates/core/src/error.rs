use thiserror::Error;

/// Errors raised by model construction, evaluation and estimation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CopulaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value {value} at ({u}, {v})")]
    NonFinite { u: f64, v: f64, value: f64 },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("invalid family: {0}")]
    InvalidFamily(String),

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("invalid source copula: {0}")]
    InvalidSource(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("model refused: {0}")]
    InvalidModel(String),

    #[error("malformed input, field '{field}': {message}")]
    Malformed { field: String, message: String },
}

pub type Result<T> = std::result::Result<T, CopulaError>;

pub(crate) fn invalid_arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(CopulaError::InvalidArgument(msg.into()))
}

pub(crate) fn malformed<T>(field: impl Into<String>, message: impl Into<String>) -> Result<T> {
    Err(CopulaError::Malformed { field: field.into(), message: message.into() })
}
