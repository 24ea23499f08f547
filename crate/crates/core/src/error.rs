//! Error type shared by the whole crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or conformability violation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed or truncated file content.
    #[error("format error at byte {offset}: {msg}")]
    Format { msg: String, offset: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Numerical breakdown (imaginary residue, stagnation, drifting recurrence).
    #[error("numerical error: {0}")]
    Numeric(String),

    /// Iteration produced non-finite values.
    #[error("divergence: {0}")]
    Divergence(String),

    /// Inconsistent operator or solver setup detected before iterating.
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn format(msg: impl Into<String>, offset: u64) -> Self {
        Error::Format { msg: msg.into(), offset }
    }
}
