use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera rig: {0}")]
    InvalidRig(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("box corner lies behind the camera (z = {z:.4})")]
    BehindCamera { z: f64 },

    #[error("map unit mismatch: expected {expected:?}, got {actual:?}")]
    UnitMismatch {
        expected: crate::geometry::MapUnit,
        actual: crate::geometry::MapUnit,
    },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("degenerate regression: {0}")]
    DegenerateFit(String),

    #[error("empty disparity range [{min}, {max}]")]
    EmptyRange { min: i32, max: i32 },

    #[error("the two point clouds share no pixels")]
    NoOverlap,

    #[error("no mutually valid pixels to compare")]
    NoCommonPixels,

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("object {index} ({class}) has disparity outside the matcher range: {detail}")]
    ObjectOutOfRange {
        index: usize,
        class: String,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
