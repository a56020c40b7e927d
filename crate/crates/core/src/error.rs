//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("cannot access {path}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite value encountered in {stage}")]
    NonFinite { stage: String },

    #[error("zero-norm embedding at row {row}: normalization undefined")]
    ZeroNorm { row: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("weight out of [0,1] at index {index}: {value}")]
    WeightRange { index: usize, value: f64 },

    #[error("{what} is empty at threshold {threshold}: {hint}")]
    EmptySelection {
        what: String,
        threshold: f64,
        hint: String,
    },
}

impl Error {
    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::File {
            path: path.display().to_string(),
            source,
        }
    }
}
