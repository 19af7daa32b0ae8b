use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid M4 specification: {0}")]
    InvalidSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{what} is out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },

    /// A ratio or conditional estimate whose conditioning event never occurred.
    #[error("undefined estimate: {0}")]
    Undefined(String),
}

pub type Result<T> = std::result::Result<T, Error>;
