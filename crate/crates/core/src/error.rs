use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("non-finite value in {0}")]
    NonFinitePayload(String),

    #[error("truncated tensor blob {path}: expected {expected} bytes, found {found}")]
    TruncatedBlob {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ontology error: {0}")]
    Ontology(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable numeric code per variant, used by the CLI as the process exit status.
    pub fn code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) => 10,
            Error::Domain(_) => 11,
            Error::DegenerateVector(_) => 12,
            Error::DimensionMismatch(_) => 13,
            Error::MalformedHeader { .. } => 14,
            Error::NonFinitePayload(_) => 15,
            Error::TruncatedBlob { .. } => 16,
            Error::Config(_) => 17,
            Error::Ontology(_) => 18,
            Error::Io(_) => 19,
            Error::Json(_) => 20,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
