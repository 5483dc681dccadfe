//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by this crate, grouped by the way callers (and the CLI
/// exit-code mapping) need to tell them apart.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input violated a documented invariant or precondition.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A file could not be read or written.
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file did not match the documented JSON schema. The source error
    /// carries line/column context.
    #[error("parse error in {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// A numerical procedure failed (divergence, non-finite values).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
