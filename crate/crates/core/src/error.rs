use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An input fell outside the domain of a geometric or numeric routine.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent shapes, counts, or configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// An internal invariant failed (e.g. a non-orthonormal ray frame).
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// API misuse, such as calling backward without a forward cache.
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite values appeared during optimization.
    #[error("training error: {0}")]
    Training(String),

    /// Loss became NaN/Inf; `step` is the offending iteration.
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss {
        step: usize,
        /// Parameters from the last checkpointed finite step.
        last_finite: Box<crate::field::FieldParams>,
    },

    #[error("missing volume file: {}", .0.display())]
    MissingVolumeFile(PathBuf),

    #[error("missing pose file: {}", .0.display())]
    MissingPoseFile(PathBuf),

    #[error("unsupported manifest version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("pose count mismatch: {0}")]
    PoseCount(String),

    #[error("payload size mismatch: header implies {expected} bytes, found {found}")]
    PayloadSize { expected: usize, found: usize },

    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
