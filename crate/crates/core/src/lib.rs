//! Autoregressive multi-object tracking: detections become object tokens, a
//! causal decoder predicts an identity token per object from the history, and
//! the whole pipeline trains end to end on synthetic video.

pub mod ablation;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod detector;
pub mod domain;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod raa;
pub mod scalar;
pub mod sequence;
pub mod simdata;
pub mod tmf;
pub mod tokenize;
pub mod trainer;

pub use domain::{
    assign_free_id, BBox, Detection, FrameObservation, GtObject, IdVocabulary, Image, ModelDims,
};
pub use error::{Error, Result};
pub use inference::{track_video, InferConfig, TrackMode, Tracker};
pub use metrics::{evaluate, EvalReport};
pub use model::{ArMot, ArMotF32, ArMotF64, ModelConfig, ObjectTokenMode};
pub use scalar::Scalar;
pub use simdata::{MotRecord, TrackingResult, Video};
pub use trainer::TrainConfig;
