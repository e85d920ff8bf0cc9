use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("failed to read image {path}: {reason}")]
    ImageRead { path: PathBuf, reason: String },

    #[error("failed to write image {path}: {reason}")]
    ImageWrite { path: PathBuf, reason: String },

    #[error("singular affine transform (determinant {0:e})")]
    SingularTransform(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("image too small: {0}")]
    ImageTooSmall(String),

    #[error("transform leaves no overlap between the images")]
    EmptyOverlap,

    #[error("non-finite objective value at level {level}, iteration {iteration}")]
    NonFinite { level: usize, iteration: usize },

    #[error("weights file: {0}")]
    Weights(String),

    #[error("tuning aborted after {rejections} consecutive rejected steps")]
    TuneDiverged {
        rejections: usize,
        history: Vec<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
