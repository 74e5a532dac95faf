//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed wav {path}: {reason}")]
    WavFormat { path: PathBuf, reason: String },

    #[error("unsupported channel count {channels} in {path}: expected mono")]
    UnsupportedChannels { path: PathBuf, channels: u16 },

    #[error("signal too short for chunking: {duration_s:.3} s < 0.750 s")]
    TooShort { duration_s: f64 },

    #[error("no voiced frames detected")]
    Unvoiced,

    #[error("too few glottal cycles: need {needed}, found {found}")]
    InsufficientCycles { needed: usize, found: usize },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("weight error: {0}")]
    Weight(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("hyperparameter search failed: {0}")]
    Search(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wrap an io::Error with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
