use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LegoError>;

#[derive(Debug, Error)]
pub enum LegoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("unknown sample id {0}: not in the retained set")]
    UnknownId(u64),

    #[error("checkpoint digest mismatch: stored {stored}, computed {computed}")]
    DigestMismatch { stored: String, computed: String },

    #[error("empty evaluation set")]
    EmptySet,

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl LegoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LegoError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI. Usage errors (2) are produced by the
    /// argument parser before any of these can occur.
    pub fn exit_code(&self) -> i32 {
        match self {
            LegoError::Io { .. } => 4,
            LegoError::Internal(_) => 70,
            _ => 3,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(LegoError::Dimension { expected, got });
    }
    Ok(())
}
