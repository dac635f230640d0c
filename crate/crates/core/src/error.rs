use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("index {index} out of range for {what} of size {size}")]
    Index { what: &'static str, index: usize, size: usize },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}:{line}: parse error: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}:{line}: schema error: {msg}")]
    Schema { path: String, line: usize, msg: String },
    #[error("{path}: duplicate lexicon key {key:?} on lines {first} and {second}")]
    Conflict { path: String, key: String, first: usize, second: usize },
    #[error("graph construction error: {0}")]
    Graph(String),
    #[error("batch planning error: {0}")]
    Planning(String),
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
