use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),
    /// A numerical failure such as a non positive-definite matrix.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Invalid configuration or inputs inconsistent with the model.
    #[error("configuration error: {0}")]
    Config(String),
    /// A CSV cell that could not be read as a number.
    #[error("ingestion error at row {row}, column {column}: {message}")]
    Ingest {
        row: usize,
        column: usize,
        message: String,
    },
    /// A malformed model or config document.
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
