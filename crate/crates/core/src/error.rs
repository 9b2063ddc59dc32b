use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{kind}: incompatible shapes {shapes:?}")]
    Dimension {
        kind: &'static str,
        shapes: Vec<Vec<usize>>,
    },

    #[error("{kind}: non-finite value produced")]
    NonFinite { kind: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("invalid record {id}: {reason}")]
    Validation { id: String, reason: String },

    #[error("query for hashtag {hashtag} failed: {reason}")]
    Crawl { hashtag: String, reason: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
