use std::io;

use thiserror::Error;

/// Errors produced by the avatar pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Array shapes or counts that do not agree with each other.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Geometry that cannot support the requested operation (zero area, zero normal, ...).
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    /// Arguments outside the accepted domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A NaN or infinity showed up where finite values are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A file on disk does not follow its documented layout.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn format(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
