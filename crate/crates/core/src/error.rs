//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller handed us something unusable (bad config value, empty input,
    /// out-of-bounds query points, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An internal contract between modules was broken (mismatched backends,
    /// wrong frame id fed to a tracker, ragged matrices).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Array shapes disagree (anchors vs validity flags, predictions vs
    /// ground truth, mask resolution vs frames).
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A metric has no defined value on this input (e.g. zero included pairs).
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// Synthetic scene config produces an invalid scene. Carries the first
    /// offending (frame, point) pair when a trajectory leaves the image.
    #[error("scene config rejected: {reason}")]
    ConfigRejected { reason: String },

    /// A numbered file sequence has a hole.
    #[error("missing file {missing:03} in sequence at {dir}")]
    MissingInSequence { dir: String, missing: u32 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] ::image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
