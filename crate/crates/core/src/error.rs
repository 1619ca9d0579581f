use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by the registration library.
#[derive(Debug, Error)]
pub enum RegError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular transform: {0}")]
    SingularTransform(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no RANSAC consensus: best model had {found} inliers, need {required}")]
    NoConsensus { found: usize, required: usize },
    #[error("point ({x}, {y}) outside field bounds {width}x{height}")]
    PointOutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("landmark mismatch: {0}")]
    LandmarkMismatch(String),
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image decode/encode error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, RegError>;

impl RegError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RegError::Io {
            path: path.into(),
            source,
        }
    }
}
