//! Error type shared across the toolkit.

use thiserror::Error;

/// Errors produced by dataset handling, model evaluation, patch
/// generation, and circuit emulation.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value violates its documented range.
    #[error("configuration error: {0}")]
    Config(String),

    /// Vector or tensor dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A text input could not be parsed. `row` is the 1-based line
    /// number in the source file (the header is line 1).
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    /// A power sample cannot be represented by the configured cell
    /// network. `cycle` is the 0-based sample index.
    #[error("capacity error at cycle {cycle}: {message}")]
    Capacity { cycle: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
