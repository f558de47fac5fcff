use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation (non-positive radius, time outside the horizon, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The grid cannot resolve the requested length scale.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A parameter hypothesis required by the model is violated.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    /// Ordering or sign precondition on input data does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A nonlinear solve failed to converge.
    #[error("solver failure at step {step}: {reason}")]
    Solver { step: usize, reason: String },

    /// Malformed grid or measure file.
    #[error("format error in {path}: {reason}", path = .path.display())]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}", path = .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
