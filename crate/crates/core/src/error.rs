use thiserror::Error;

/// Errors raised by the loss laboratory and its data types.
#[derive(Debug, Error)]
pub enum Error {
    /// A record or value violates one of its invariants.
    #[error("invariant violated on `{field}`: {message}")]
    Invariant { field: &'static str, message: String },

    /// A JSONL line could not be decoded.
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    /// Bad hyperparameter or configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("token id {token} is outside the vocabulary of size {vocab}")]
    OutOfVocabulary { token: u32, vocab: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("step {step} outside schedule range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invariant(field: &'static str, message: impl Into<String>) -> Self {
        Error::Invariant {
            field,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
