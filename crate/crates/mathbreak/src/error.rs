//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {reason}")]
    Dataset {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("unparseable answer: {0:?}")]
    UnparseableAnswer(String),

    #[error("no answer found in response")]
    NoAnswerFound,

    #[error("embedding space: {0}")]
    Embedding(String),

    #[error("vector dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("wordnet: {0}")]
    WordNet(String),

    #[error("null perturbation: candidate equals original word {0:?}")]
    NullPerturbation(String),

    #[error("invalid word span: {0}")]
    InvalidSpan(String),

    #[error("no whole-word occurrence of {0:?}")]
    NoOccurrence(String),

    #[error("mask input: {0}")]
    Mask(String),

    #[error("transport failure on {endpoint:?}: {cause}")]
    Transport { endpoint: String, cause: String },

    #[error("protocol error on {endpoint:?}: {cause}")]
    Protocol { endpoint: String, cause: String },

    #[error("retries exhausted on {endpoint:?} after {attempts} attempts: {cause}")]
    RetriesExhausted {
        endpoint: String,
        attempts: u32,
        cause: String,
    },

    #[error("replay miss: no cached response for {key_hash} on {endpoint:?}")]
    ReplayMiss { endpoint: String, key_hash: String },

    #[error("judge verdict unusable: {0}")]
    Judge(String),

    #[error("tokenizer asset {path:?}: {reason}")]
    Tokenizer { path: String, reason: String },

    #[error("trace: {0}")]
    Trace(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
