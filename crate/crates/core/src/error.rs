use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numeric error in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("index {index} out of range for {what} of size {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: &'static str,
        found: Vec<u8>,
    },

    #[error("{path}: truncated file, needed {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: header declares {declared} payload bytes but {actual} follow")]
    PayloadMismatch {
        path: PathBuf,
        declared: usize,
        actual: usize,
    },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("checkpoint mismatch at tensor `{name}`: {detail}")]
    CheckpointMismatch { name: String, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("training aborted: {0}")]
    NumericAbort(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
