use std::path::PathBuf;

use axum::http::StatusCode;

pub type Result<T, E = AnnotationError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("no stored post with id {0}")]
    UnknownItem(u64),

    #[error("{level}: unknown category {value:?}")]
    InvalidCategory { level: &'static str, value: String },

    #[error("{level}: non_drug cannot be combined with drug categories")]
    MixedNonDrug { level: &'static str },

    #[error("invalid annotation: {0}")]
    Invalid(String),

    #[error("store log {path} line {line}: {reason}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] idte_core::Error),
}

impl AnnotationError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AnnotationError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            AnnotationError::UnknownItem(_) => StatusCode::NOT_FOUND,
            AnnotationError::InvalidCategory { .. }
            | AnnotationError::MixedNonDrug { .. }
            | AnnotationError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}
