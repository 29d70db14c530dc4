//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent configuration (overlapping regions, bad thresholds, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Array or grid dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An input value violates a precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file exists but its contents do not parse or do not validate.
    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
}

impl Error {
    pub fn format(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
