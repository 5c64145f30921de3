use std::path::PathBuf;

use crate::classifier::DivergenceSnapshot;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Malformed IDX container. `offset` is the byte position where parsing
    /// failed (after gzip decompression, if any).
    #[error("IDX parse error at byte offset {offset}: {message}")]
    Idx { offset: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {} batch {}: loss {}", .0.epoch, .0.batch, .0.loss)]
    Diverged(Box<DivergenceSnapshot>),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
