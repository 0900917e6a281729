use thiserror::Error;

use crate::linalg::LinalgError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate geometry: expected dimension {expected}, found {actual}")]
    Degenerate { expected: usize, actual: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
