use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("image has a zero dimension")]
    ZeroDimension,
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("image {width}x{height} is smaller than the required {required}x{required}")]
    ImageTooSmall { width: usize, height: usize, required: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("degenerate box: {0}")]
    DegenerateBox(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("checkpoint fingerprint {found} does not match configuration {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    TrainingDiverged { epoch: usize, loss: f64 },
    #[error("tiles reference different source frames: {0} and {1}")]
    MixedFrames(String, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(expected: impl ToString, got: impl ToString) -> Error {
    Error::ShapeMismatch { expected: expected.to_string(), got: got.to_string() }
}
