//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CplError {
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("dimension error: expected {expected}, got {got} in {context}")]
    Dimension {
        expected: usize,
        got: usize,
        context: String,
    },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("lifecycle error: {0}")]
    Lifecycle(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CplError>;
