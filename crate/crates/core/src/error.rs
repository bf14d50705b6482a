use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Remote embeddings required by a forward pass that are not in the cache.
    /// Each entry is `(node, layer)`.
    #[error("missing {} remote embeddings", missing.len())]
    CacheMiss { missing: Vec<(usize, usize)> },

    #[error("transport: {0}")]
    Transport(String),

    #[error("server error {code}: {msg}")]
    Server { code: u8, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
