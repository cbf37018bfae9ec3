use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: unknown label {label:?}")]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        label: String,
    },

    #[error("{0}: file contains no records")]
    EmptyFile(PathBuf),

    #[error("corpus {name}: expected {expected} records, found {found}")]
    CountMismatch {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate example id {0:?}")]
    DuplicateId(String),

    #[error("duplicate label {0:?} after normalization")]
    DuplicateLabel(String),

    #[error("class {label:?} has {available} examples, {required} required")]
    InsufficientClass {
        label: String,
        available: usize,
        required: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown template {0:?}")]
    UnknownTemplate(String),

    #[error("few-shot exemplars: {0}")]
    Exemplars(String),

    #[error("example ids do not align: {0}")]
    IdMismatch(String),

    #[error("missing {task} rationale for example {example_id:?}")]
    MissingRationale {
        example_id: String,
        task: &'static str,
    },

    #[error("{failed} of {total} examples failed, above the {threshold:.0}% threshold")]
    FailureThreshold {
        failed: usize,
        total: usize,
        threshold: f64,
    },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by input data rather than configuration or backends.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Malformed { .. }
                | Error::UnknownLabel { .. }
                | Error::EmptyFile(_)
                | Error::CountMismatch { .. }
                | Error::DuplicateId(_)
                | Error::DuplicateLabel(_)
                | Error::InsufficientClass { .. }
                | Error::IdMismatch(_)
                | Error::MissingRationale { .. }
                | Error::Json(_)
        )
    }
}
