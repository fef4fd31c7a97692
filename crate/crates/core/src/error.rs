use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
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

    #[error("duplicate note_id {note_id:?} at {path}:{line}")]
    DuplicateNoteId {
        path: PathBuf,
        line: usize,
        note_id: String,
    },

    #[error("value {value:?} is outside the {field} domain")]
    Domain { field: &'static str, value: String },

    #[error("unknown note_id {0:?}")]
    UnknownNote(String),

    #[error("span {label} [{start}, {end}) out of bounds for note {note_id:?} (length {len})")]
    SpanOutOfBounds {
        note_id: String,
        label: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("span {label} [{start}, {end}) does not align with token boundaries")]
    Alignment {
        label: String,
        start: usize,
        end: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("note sets differ: {0}")]
    KeyMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
