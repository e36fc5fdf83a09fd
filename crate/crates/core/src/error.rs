use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: ragged row at line {line}: expected {expected} values, found {found}")]
    RaggedRow {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("degenerate channel `{0}`: max equals min")]
    DegenerateChannel(String),

    #[error("degenerate range: {0}")]
    DegenerateRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("joint set mismatch: expected {expected:?}, found {found:?}")]
    JointMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("cannot split {0} sequence(s): at least 2 are required")]
    CannotSplit(usize),

    #[error("shape mismatch in {layer}: expected {expected}, found {found}")]
    ShapeMismatch {
        layer: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unsupported mode: {0}")]
    Unsupported(String),

    #[error("missing {0}")]
    Missing(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter(_) | Error::Unsupported(_) => ErrorKind::Usage,
            Error::NonFinite(_)
            | Error::DegenerateRange(_)
            | Error::DegenerateChannel(_)
            | Error::ShapeMismatch { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
