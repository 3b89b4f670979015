use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The CLI maps each variant onto its exit code through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt data at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical failure in {location}: {reason}")]
    Numerical { location: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numerical(location: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Numerical {
            location: location.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 1 for I/O, 2 for validation, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            Error::Format(_) | Error::Corrupt { .. } | Error::Version { .. } => 1,
            Error::Validation(_) => 2,
            Error::Numerical { .. } => 3,
        }
    }
}
