use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent or out-of-range configuration. Each entry names the
    /// offending field.
    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    /// Argument outside an operation's domain (shape mismatch, bad label, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error in {path}: expected {expected}, found {found}")]
    Format { path: String, expected: String, found: String },

    #[error("corrupt artifact {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
