use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image data: {0}")]
    CorruptData(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("crop rectangle {rect} exceeds {width}x{height} image")]
    OutOfBounds {
        rect: String,
        width: usize,
        height: usize,
    },
    #[error("gain must be > 0, got {0}")]
    InvalidGain(f64),
    #[error("window size must be odd and >= 3, got {0}")]
    InvalidWindow(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("similarity inputs must be non-negative, got ({0}, {1})")]
    NegativeInput(f64, f64),
    #[error("dimension mismatch: expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("unparseable file name: {0}")]
    UnparseableName(String),
    #[error("unknown expression code {code:?} in {name}")]
    UnknownExpressionCode { name: String, code: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("split leak: sample {0} is in both the test set and the gallery")]
    SplitLeak(usize),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
