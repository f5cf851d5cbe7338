//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by any operation in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation contract (shape mismatch, bad range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data failed validation (malformed CSV, out-of-order dates, ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Failure while computing (diverged training, undefined metric, ...).
    #[error("computation failed: {0}")]
    Numeric(String),

    /// I/O failure, always carrying the path involved.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that indicate bad inputs rather than a failure at runtime.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Contract(_) | Error::Data(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
