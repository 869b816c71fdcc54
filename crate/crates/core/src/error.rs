use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("record {index}: {message}")]
    Ingest { index: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("no mapping for raw label {0:?}")]
    UnmappedLabel(String),

    #[error("prompt needs {needed} tokens but the budget is {max}")]
    Truncation { needed: usize, max: usize },

    #[error("prompt assembly: {0}")]
    Assembly(String),

    #[error("backend: {0}")]
    Backend(String),

    #[error("backend lacks capability: {0}")]
    Capability(&'static str),

    #[error("generation: {0}")]
    Generation(String),

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("parse error at item {index}: {message}")]
    Parse { index: usize, message: String },

    #[error("relation labeling: {0}")]
    Labeling(String),

    #[error("run aborted: {0}")]
    Run(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(index: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            index,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
