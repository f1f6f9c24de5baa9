use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image {id}: {message}")]
    Image { id: String, message: String },

    #[error("tag {0:?} is not in the vocabulary")]
    UnknownTag(String),

    #[error("item {0} has an empty tag list")]
    EmptyTags(String),

    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("chat request for {id} failed after {attempts} attempt(s): {message}")]
    Transport {
        id: String,
        attempts: usize,
        message: String,
    },

    #[error("missing descriptions for {} id(s): {}", .0.len(), .0.join(", "))]
    MissingDescriptions(Vec<String>),

    #[error("vocabulary hash mismatch: checkpoint has {expected}, dataset has {found}")]
    VocabularyMismatch { expected: String, found: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than a
    /// failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::Vocabulary(_)
                | Error::UnknownTag(_)
                | Error::EmptyTags(_)
        )
    }
}
