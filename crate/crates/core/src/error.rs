use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
///
/// Variants are grouped by [`ErrorKind`] so callers (and the CLI exit code)
/// can distinguish bad input from numerical trouble and I/O failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("model has {cells} cells, exact computation supports at most {limit}")]
    Capacity { cells: u128, limit: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fit did not converge after {iterations} iterations (score sup-norm {score_norm:e}): {detail}")]
    NotConverged {
        iterations: usize,
        score_norm: f64,
        detail: String,
    },

    #[error("singular information matrix; non-identified parameter indices {indices:?}")]
    SingularInformation { indices: Vec<usize> },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dimension(_)
            | Error::Validation(_)
            | Error::Capacity { .. }
            | Error::Parse { .. } => ErrorKind::Validation,
            Error::Numerical(_) | Error::NotConverged { .. } | Error::SingularInformation { .. } => {
                ErrorKind::Numerical
            }
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Validation => 1,
            ErrorKind::Numerical => 2,
            ErrorKind::Io => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl std::fmt::Display, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
