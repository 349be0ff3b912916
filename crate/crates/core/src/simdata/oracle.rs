use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::domain::{BBox, Detection, FrameObservation};
use crate::error::{Error, Result};
use crate::tokenize::{crop_mean_color, query_features};

/// Noise model of the stand-in detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Probability that a visible object is dropped.
    pub p_miss: f64,
    /// Mean number of false positives per frame.
    pub fp_rate: f64,
    /// Std of the per-coordinate box jitter, in normalized units.
    pub jitter_sigma: f64,
    pub conf_tp_mean: f64,
    pub conf_fp_mean: f64,
    pub conf_sd: f64,
    /// Length of the emitted query embeddings.
    pub d_det: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            p_miss: 0.0,
            fp_rate: 0.0,
            jitter_sigma: 0.0,
            conf_tp_mean: 0.95,
            conf_fp_mean: 0.55,
            conf_sd: 0.0,
            d_det: 64,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if !prob(self.p_miss) || !prob(self.conf_tp_mean) || !prob(self.conf_fp_mean) {
            return Err(Error::InvalidConfig(
                "oracle probabilities must lie in [0,1]".into(),
            ));
        }
        if self.fp_rate < 0.0 || self.jitter_sigma < 0.0 || self.conf_sd < 0.0 || self.d_det == 0 {
            return Err(Error::InvalidConfig(
                "oracle rates and spreads must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// A detection paired with the ground-truth identity it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDetection {
    pub detection: Detection,
    pub gt_id: Option<u32>,
}

fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn sample_conf(mean: f64, sd: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    let n = Normal::new(mean, sd).expect("valid std");
    n.sample(rng).clamp(0.0, 1.0)
}

/// Simulated detector: drops, jitters, and pads the visible ground truth.
pub fn oracle_detect(
    frame: &FrameObservation,
    cfg: &OracleConfig,
    seed: u64,
) -> Vec<LabeledDetection> {
    let mut rng = frame_rng(seed, frame.frame_index);
    let jitter =
        (cfg.jitter_sigma > 0.0).then(|| Normal::new(0.0, cfg.jitter_sigma).expect("valid std"));
    let mut out = Vec::new();
    for gt in frame.ground_truth.iter().filter(|g| g.visible) {
        let keep: f64 = rng.random();
        if keep < cfg.p_miss {
            continue;
        }
        let bbox = match &jitter {
            None => Some(gt.bbox),
            Some(j) => {
                let b = gt.bbox;
                let mut d = || j.sample(&mut rng);
                BBox::clamped(b.x1 + d(), b.y1 + d(), b.x2 + d(), b.y2 + d())
            }
        };
        let Some(bbox) = bbox else { continue };
        let confidence = sample_conf(cfg.conf_tp_mean, cfg.conf_sd, &mut rng);
        out.push(LabeledDetection {
            detection: make_detection(frame, bbox, confidence, cfg.d_det),
            gt_id: Some(gt.id),
        });
    }
    if cfg.fp_rate > 0.0 {
        let count = Poisson::new(cfg.fp_rate)
            .expect("positive rate")
            .sample(&mut rng) as usize;
        for _ in 0..count {
            let (w, h) = (rng.random_range(0.1..0.3), rng.random_range(0.1..0.3));
            let (cx, cy) = (
                rng.random_range(w / 2.0..1.0 - w / 2.0),
                rng.random_range(h / 2.0..1.0 - h / 2.0),
            );
            let Some(bbox) = BBox::from_center(cx, cy, w, h) else {
                continue;
            };
            let confidence = sample_conf(cfg.conf_fp_mean, cfg.conf_sd, &mut rng);
            out.push(LabeledDetection {
                detection: make_detection(frame, bbox, confidence, cfg.d_det),
                gt_id: None,
            });
        }
    }
    out
}

fn make_detection(
    frame: &FrameObservation,
    bbox: BBox,
    confidence: f64,
    d_det: usize,
) -> Detection {
    Detection {
        bbox,
        confidence,
        query_embedding: query_features(&bbox, &frame.image, d_det),
        appearance: Some(crop_mean_color(&bbox, &frame.image)),
    }
}

/// Runs the oracle over every frame and stores detections plus aligned gt ids.
pub fn apply_oracle(frames: &mut [FrameObservation], cfg: &OracleConfig, seed: u64) -> Result<()> {
    cfg.validate()?;
    for frame in frames.iter_mut() {
        let labeled = oracle_detect(frame, cfg, seed);
        frame.gt_ids = Some(labeled.iter().map(|l| l.gt_id).collect());
        frame.detections = labeled.into_iter().map(|l| l.detection).collect();
    }
    Ok(())
}
