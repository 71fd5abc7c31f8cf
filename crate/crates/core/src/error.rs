use std::path::PathBuf;

/// Errors raised by the ensemble library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A file could not be parsed at all (bad JSON, wrong field types).
    #[error("{path}:{line}: malformed input: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Input parsed but violates a data contract (alignment, duplicates,
    /// negative weights, mismatched model or relation counts).
    #[error("{0}")]
    Invalid(String),

    /// A numeric precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An aggregate was requested over an empty collection.
    #[error("no data: {0}")]
    NoData(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Process exit code for this error: 1 for unreadable or malformed input,
    /// 2 for inputs that parse but are inconsistent.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Malformed { .. } | Error::Io { .. } => 1,
            Error::Invalid(_) | Error::Contract(_) | Error::NoData(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
