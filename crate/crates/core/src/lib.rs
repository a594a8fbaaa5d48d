//! Surround-view multi-image stitching.
//!
//! The pipeline projects each camera image onto a cylinder, aligns adjacent
//! pairs by direct coarse-to-fine optimization of a mesh warp (homography plus
//! residual control-point motion, regularized by rectangular shape, size and
//! fold constraints), propagates pairwise motion to the central image, and
//! composes the warped images with dynamic-programming seams.

pub mod align;
pub mod camera;
pub mod compose;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod losses;
pub mod mesh;
pub mod pipeline;
pub mod propagate;

pub use error::{Error, Result};
