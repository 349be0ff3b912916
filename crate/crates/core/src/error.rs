use std::path::PathBuf;

/// Errors produced by the tracking pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("identity capacity exhausted: all {capacity} IDs are in use")]
    CapacityExhausted { capacity: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("clip too short: need at least {needed} frames, got {got}")]
    ClipTooShort { needed: usize, got: usize },

    #[error("video too short: {frames} frames cannot hold a clip of {clip_len} at gap {gap}")]
    VideoTooShort {
        frames: usize,
        clip_len: usize,
        gap: usize,
    },

    #[error("sequence of {len} slots exceeds decoder maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("non-finite loss at step {step}: total={total} ce={ce}")]
    NonFiniteLoss { step: usize, total: f64, ce: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint not found: {}", .0.display())]
    CheckpointNotFound(PathBuf),

    #[error("frame range mismatch: {0}")]
    FrameRange(String),

    #[error("model/config mismatch: {0}")]
    ModelMismatch(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
