//! Train, track and score in one call; shared by the CLI, sweeps and tests.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::inference::{track_video, InferConfig};
use crate::metrics::{evaluate_frames, EvalReport};
use crate::model::ArMot;
use crate::scalar::Scalar;
use crate::simdata::{TrackingResult, Video};
use crate::trainer::{run_training, TrainReport};

/// Builds a model from `cfg.model` and trains it on `videos`.
pub fn train_model<T: Scalar>(
    cfg: &RunConfig,
    videos: &[Video],
    log: &mut dyn Write,
) -> Result<(ArMot<T>, TrainReport)> {
    cfg.validate()?;
    let mut model = ArMot::<T>::new(cfg.model.clone())?;
    let report = run_training(&mut model, videos, &cfg.train, log)?;
    Ok((model, report))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VideoScore {
    pub name: String,
    pub report: EvalReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteScore {
    pub combined: EvalReport,
    pub videos: Vec<VideoScore>,
}

/// Tracks every video and scores it against its visible ground truth.
pub fn score_videos<T: Scalar>(
    model: &ArMot<T>,
    videos: &[Video],
    cfg: &InferConfig,
) -> Result<(SuiteScore, Vec<TrackingResult>)> {
    let mut scores = Vec::with_capacity(videos.len());
    let mut results = Vec::with_capacity(videos.len());
    for v in videos {
        let pred = track_video(model, v, cfg)?;
        let report = evaluate_frames(&v.ground_truth_result(), &pred, v.len() as u32)?;
        scores.push(VideoScore {
            name: v.name.clone(),
            report,
        });
        results.push(pred);
    }
    let combined =
        EvalReport::combine(&scores.iter().map(|s| s.report.clone()).collect::<Vec<_>>());
    Ok((
        SuiteScore {
            combined,
            videos: scores,
        },
        results,
    ))
}
