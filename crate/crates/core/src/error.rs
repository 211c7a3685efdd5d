use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("question `{question_id}`: invalid `{field}`: {message}")]
    Invariant {
        question_id: String,
        field: String,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no expandable towers")]
    EmptyMask,

    #[error("non-finite gradient in epoch {epoch}, batch {batch} (first offending question `{question_id}`, coordinate {coordinate})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        question_id: String,
        coordinate: usize,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invariant(
        question_id: &str,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Invariant {
            question_id: question_id.to_owned(),
            field: field.into(),
            message: message.into(),
        }
    }
}
