use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user-supplied configuration (missing class directory, impossible
    /// split fraction, unknown dataset id, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument violated an operation precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A dataset file could not be read or decoded.
    #[error("ingestion error for {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    /// Training diverged or otherwise failed.
    #[error("training error at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    /// A non-finite value showed up where one must not.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A pipeline stage failed; wraps the underlying cause.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
