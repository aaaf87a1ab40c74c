use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible shapes or structural settings.
    #[error("configuration error in {op}: {detail}")]
    Config { op: String, detail: String },

    /// NaN or infinity produced by a forward or backward computation.
    #[error("numeric error: non-finite value in {0}")]
    Numeric(String),

    /// The caller violated an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error on {path}: {detail}")]
    Io { path: PathBuf, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("fitting error: {0}")]
    Fit(String),

    #[error("config parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn config(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            op: op.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            detail: err.to_string(),
        }
    }
}
