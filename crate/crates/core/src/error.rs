use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    EmptyInput(String),

    #[error("bad magic at offset {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: u64,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported format version {found} at offset {offset} (expected {expected})")]
    BadVersion { offset: u64, expected: u32, found: u32 },

    #[error("truncated input at offset {offset}: {what}")]
    Truncated { offset: u64, what: String },

    #[error("invalid embedding table: {0}")]
    InvalidTable(String),

    #[error("unknown item {0}")]
    UnknownItem(u64),

    #[error("unknown user {0}")]
    UnknownUser(u64),

    #[error("user {user} has {len} items, needs at least {needed}")]
    TooFewItems { user: u64, len: usize, needed: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {stage}")]
    NonFinite { stage: String },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn non_finite(stage: impl Into<String>) -> Self {
        Error::NonFinite { stage: stage.into() }
    }
}
