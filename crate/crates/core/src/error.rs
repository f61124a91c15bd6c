use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated a precondition (shape mismatch, empty batch, bad hyper-parameter).
    #[error("usage error: {0}")]
    Usage(String),
    /// Input outside the model's domain (e.g. token id >= vocabulary size).
    #[error("domain error: {0}")]
    Domain(String),
    /// A computation produced NaN/Inf. `step` is the optimisation step when known.
    #[error("numeric error{}: {msg}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Numeric { step: Option<usize>, msg: String },
    /// Every candidate direction vanished.
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric { step: None, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Attaches a step index to a numeric error, leaving other variants untouched.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::Numeric { step: None, msg } => Error::Numeric { step: Some(step), msg },
            other => other,
        }
    }
}
