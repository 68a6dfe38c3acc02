use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SnnError {
    #[error("dimension mismatch in {context}: {left:?} vs {right:?}")]
    Dimension {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in {what} at step {step}")]
    Numeric { what: String, step: usize },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("conversion failed: {0}")]
    Conversion(String),

    #[error("allocation of {bytes} bytes failed")]
    Allocation { bytes: usize },

    #[error("unknown {kind} `{name}`")]
    NotFound { kind: &'static str, name: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SnnError {
    pub(crate) fn dims(context: &'static str, left: &[usize], right: &[usize]) -> Self {
        SnnError::Dimension {
            context,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SnnError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, SnnError>;
