//! Object-centric stereo matching for 3D object detection.

pub mod association;
pub mod boxes;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod local_disparity;
pub mod matcher;
pub mod metrics;
pub mod pipeline;
pub mod ply;
pub mod synth;

pub use error::{Error, Result};
