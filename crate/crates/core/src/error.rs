use std::path::PathBuf;

use thiserror::Error;

/// Where in an input file a parse problem was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Line(usize),
    Byte(u64),
}

impl std::fmt::Display for Position {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Position::Line(l) => write!(f, "line {l}"),
            Position::Byte(b) => write!(f, "byte {b}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path} ({position}): {message}")]
    Parse {
        path: PathBuf,
        position: Position,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("training aborted at epoch {epoch}, batch {batch}: non-finite {term}")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        term: String,
    },

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

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
