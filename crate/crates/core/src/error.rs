//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible table or batch shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A value violates a documented contract (not row-stochastic, negative
    /// probability, non-finite coordinate, budget ≤ 0, ...).
    #[error("invalid value: {0}")]
    Invalid(String),

    /// Dataset-level problems: empty splits, missing classes, too few users.
    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
