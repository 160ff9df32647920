use alloc::string::String;

/// Errors raised by the numerical core and the model built on it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("loss must be a scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("decoder {decoder} expects {expected} conditioning vectors, got {got}")]
    ArityMismatch {
        decoder: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    InvalidToken { id: usize, vocab: usize },
    #[error("vocabulary mismatch: batch has {batch} entries, model has {model}")]
    VocabularyMismatch { batch: usize, model: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("loss diverged: {0}")]
    Diverged(String),
}

pub type Result<T> = core::result::Result<T, Error>;
