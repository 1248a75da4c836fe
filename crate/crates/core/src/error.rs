use std::path::PathBuf;

/// Errors raised anywhere in the sounder toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid m-sequence parameters: {0}")]
    InvalidSequence(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("no signal: {0}")]
    NoSignal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file: {msg}")]
    Malformed { path: PathBuf, msg: String },

    #[error("{path}: missing required file")]
    MissingFile { path: PathBuf },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Malformed {
            path: path.into(),
            msg: msg.to_string(),
        }
    }
}
