use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FlekdError>;

#[derive(Debug, Error)]
pub enum FlekdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o failure on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv {path}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("header mismatch in {path}: {detail}")]
    HeaderMismatch { path: PathBuf, detail: String },

    #[error("no usable rows in {path} ({dropped} dropped)")]
    NoUsableRows { path: PathBuf, dropped: usize },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("round {round} failed")]
    Round {
        round: usize,
        #[source]
        source: Box<FlekdError>,
    },
}

impl FlekdError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FlekdError::InvalidArgument(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        FlekdError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FlekdError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_round(self, round: usize) -> Self {
        FlekdError::Round {
            round,
            source: Box::new(self),
        }
    }
}
