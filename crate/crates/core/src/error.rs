use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the stitching pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("singular configuration: {0}")]
    SingularConfiguration(String),

    #[error("degenerate warp: {0}")]
    DegenerateWarp(String),

    #[error("degenerate motion chain: {0}")]
    DegenerateChain(String),

    #[error("no overlap between images: {0}")]
    NoOverlap(String),

    #[error("optimization failed: {message}")]
    OptimizationFailed {
        message: String,
        /// Last iterate, flattened parameter vector.
        last_iterate: Vec<f64>,
    },

    /// Failure while aligning one adjacent pair of a set.
    #[error("pair ({ref_index}, {tar_index}): {source}")]
    Pair {
        ref_index: usize,
        tar_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("failed to load {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that mean "these two images could not be aligned".
    pub fn is_alignment_failure(&self) -> bool {
        matches!(
            self,
            Error::NoOverlap(_) | Error::OptimizationFailed { .. } | Error::DegenerateWarp(_) | Error::Pair { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
