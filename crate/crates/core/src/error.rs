use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("selection error: {0}")]
    Selection(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("artifact mismatch: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
