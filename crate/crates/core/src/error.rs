use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OmtError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("path enumeration refused: {count} paths exceed the cap of {cap}")]
    TooManyPaths { count: u128, cap: u128 },

    #[error("restricted master LP hit its iteration limit at column-generation iteration {iteration}")]
    LpIterationLimit { iteration: usize },

    #[error("model error: {0}")]
    Model(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, OmtError>;

impl OmtError {
    pub fn config(msg: impl Into<String>) -> Self {
        OmtError::Config(msg.into())
    }
}
