use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("box coordinate {value} at index {index} outside [0, 1]")]
    BoxOutOfRange { index: usize, value: f64 },

    #[error("missing header field `{0}`")]
    MissingField(&'static str),

    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },

    #[error("sentence index {index} out of range for {n} images")]
    SentenceIndex { index: usize, n: usize },

    #[error("token id {id} outside vocabulary of size {size}")]
    UnknownToken { id: usize, size: usize },

    #[error("vocabulary hash mismatch: checkpoint {expected}, supplied {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Parse {
            what,
            detail: detail.into(),
        }
    }
}
