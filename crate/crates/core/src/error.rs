use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header in {0}")]
    MalformedHeader(String),

    #[error("truncated payload in {context}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("mask value {value} at index {index} violates arity {arity}")]
    ArityMismatch { value: u8, index: usize, arity: u8 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("could not place body {body} of {requested} after {attempts} attempts")]
    PlacementFailure {
        body: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("shape mismatch at layer {layer} ({kind}): {detail}")]
    ShapeMismatch {
        layer: usize,
        kind: &'static str,
        detail: String,
    },

    #[error("activation tape is stale or does not belong to this network")]
    StaleTape,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("not enough samples: {0}")]
    NotEnoughSamples(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty gallery")]
    EmptyGallery,

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
