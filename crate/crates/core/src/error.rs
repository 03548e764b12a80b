use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes or hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse: wrong kind of weights, stale tape, mismatched layouts.
    #[error("usage error: {0}")]
    Usage(String),

    /// NaN/Inf encountered where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image parse error in {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: crate::eval::pnm::PnmError,
    },

    #[error(transparent)]
    Checkpoint(#[from] crate::train::checkpoint::CheckpointError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category tag used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Numeric(_) => "numeric",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Checkpoint(_) => "checkpoint",
        }
    }
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use usage_err;
