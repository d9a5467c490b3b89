//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by tensor math, data loading, and experiment plumbing.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that do not line up (matrix products, batch sizes, layer widths).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Inputs that violate a documented precondition (bad probabilities,
    /// out-of-range hyperparameters, inconsistent config fields).
    #[error("validation error: {0}")]
    Validation(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// API misuse (missing model, invalid layer index, unknown predictor).
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed external files (IDX, CSV, config).
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
