use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the toolkit.
///
/// The variants fall into four classes (usage, format, numerical, I/O) which
/// the command-line front end maps onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error in {path}: {msg}", path = .path.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "<memory>".into()))]
    Format { path: Option<PathBuf>, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format { path: None, msg: msg.into() }
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Attach a file path to a format error that was raised without one.
    pub fn at_path(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Format { path: None, msg } => Error::Format { path: Some(path.into()), msg },
            other => other,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Usage(_) => ErrorClass::Usage,
            Error::Format { .. } => ErrorClass::Format,
            Error::Numerical(_) => ErrorClass::Numerical,
            Error::Io { .. } => ErrorClass::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Format,
    Numerical,
    Io,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
