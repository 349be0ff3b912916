use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::motchallenge::{write_motchallenge, MotRecord, TrackingResult};
use super::oracle::{apply_oracle, OracleConfig};
use super::scenario::{generate_scenario, Motion, Occlusion, ScenarioConfig, Video};
use crate::error::{Error, Result};

/// Recipe for a batch of scenarios; every scenario gets its own derived seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub n_scenarios: usize,
    pub n_objects_min: usize,
    pub n_objects_max: usize,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    /// `linear`, `sinusoidal`, `bounce`, or `mixed`.
    pub motion: String,
    /// Chance that each object gets one occlusion event.
    pub occlusion_prob: f64,
    pub occlusion_min: usize,
    pub occlusion_max: usize,
    pub appearance_similarity: f64,
    pub min_separation: f64,
    pub max_speed: f64,
    pub min_size: f64,
    pub max_size: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub oracle: OracleConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            n_scenarios: 40,
            n_objects_min: 2,
            n_objects_max: 5,
            n_frames: 40,
            height: 32,
            width: 32,
            motion: "mixed".into(),
            occlusion_prob: 0.25,
            occlusion_min: 1,
            occlusion_max: 3,
            appearance_similarity: 0.0,
            min_separation: 0.2,
            max_speed: 0.015,
            min_size: 0.15,
            max_size: 0.25,
            seed: 0,
            oracle: OracleConfig::default(),
        }
    }
}

impl SuiteConfig {
    /// Well-separated, occlusion-free, constant-velocity scenes.
    pub fn easy(n_scenarios: usize, seed: u64) -> Self {
        Self {
            n_scenarios,
            n_objects_min: 2,
            n_objects_max: 4,
            motion: "linear".into(),
            occlusion_prob: 0.0,
            min_separation: 0.28,
            max_speed: 0.012,
            seed,
            ..Default::default()
        }
    }

    /// 2–5 objects, mixed motion, occasional 1–3 frame occlusions.
    pub fn training(n_scenarios: usize, seed: u64) -> Self {
        Self {
            n_scenarios,
            seed,
            ..Default::default()
        }
    }

    /// Frequent occlusions lasting up to 8 frames.
    pub fn occlusion_heavy(n_scenarios: usize, seed: u64) -> Self {
        Self {
            n_scenarios,
            n_objects_min: 3,
            n_objects_max: 4,
            occlusion_prob: 0.8,
            occlusion_min: 3,
            occlusion_max: 8,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_objects_min == 0 || self.n_objects_min > self.n_objects_max {
            return Err(Error::InvalidConfig(
                "need 1 <= n_objects_min <= n_objects_max".into(),
            ));
        }
        if self.occlusion_prob > 0.0
            && (self.occlusion_min == 0
                || self.occlusion_min > self.occlusion_max
                || self.occlusion_max + 2 > self.n_frames)
        {
            return Err(Error::InvalidConfig(
                "occlusion durations must satisfy 1 <= min <= max <= n_frames - 2".into(),
            ));
        }
        if self.motion != "mixed" {
            self.motion.parse::<Motion>()?;
        }
        self.oracle.validate()
    }

    /// Scenario config for the `index`-th video of the suite.
    pub fn scenario(&self, index: usize) -> Result<ScenarioConfig> {
        self.validate()?;
        let seed = self.seed.wrapping_mul(1_000_003).wrapping_add(index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5EED);
        let n_objects = rng.random_range(self.n_objects_min..=self.n_objects_max);
        let motion = if self.motion == "mixed" {
            [Motion::Linear, Motion::Sinusoidal, Motion::Bounce][rng.random_range(0..3)]
        } else {
            self.motion.parse()?
        };
        let mut occlusions = Vec::new();
        for object in 0..n_objects {
            if rng.random::<f64>() < self.occlusion_prob {
                let duration = rng.random_range(self.occlusion_min..=self.occlusion_max);
                let start = rng.random_range(1..=self.n_frames - duration - 1);
                occlusions.push(Occlusion {
                    start,
                    duration,
                    object,
                });
            }
        }
        Ok(ScenarioConfig {
            n_objects,
            n_frames: self.n_frames,
            height: self.height,
            width: self.width,
            motion,
            occlusions,
            appearance_similarity: self.appearance_similarity,
            seed,
            min_size: self.min_size,
            max_size: self.max_size,
            max_speed: self.max_speed,
            min_separation: self.min_separation,
            ..Default::default()
        })
    }
}

/// Generates every scenario of a suite and runs the detection oracle on it.
pub fn generate_suite(cfg: &SuiteConfig) -> Result<Vec<Video>> {
    (0..cfg.n_scenarios)
        .map(|i| {
            let sc = cfg.scenario(i)?;
            let mut video = generate_scenario(&sc)?;
            video.name = format!("scenario-{i:03}");
            apply_oracle(&mut video.frames, &cfg.oracle, sc.seed ^ 0x0DE7)?;
            Ok(video)
        })
        .collect()
}

impl Video {
    /// Visible ground-truth boxes as MOTChallenge records.
    pub fn ground_truth_result(&self) -> TrackingResult {
        let mut records = Vec::new();
        for f in &self.frames {
            for g in f.ground_truth.iter().filter(|g| g.visible) {
                records.push(MotRecord::from_normalized(
                    f.frame_index,
                    g.id as u64,
                    &g.bbox,
                    1.0,
                    f.image.width,
                    f.image.height,
                ));
            }
        }
        TrackingResult::new(records)
    }

    /// Detections as MOTChallenge records with id −1.
    pub fn detection_result(&self) -> TrackingResult {
        let mut records = Vec::new();
        for f in &self.frames {
            for d in &f.detections {
                let mut r = MotRecord::from_normalized(
                    f.frame_index,
                    0,
                    &d.bbox,
                    d.confidence,
                    f.image.width,
                    f.image.height,
                );
                r.id = -1;
                records.push(r);
            }
        }
        TrackingResult::new(records)
    }
}

/// Writes `video.json`, `gt/gt.txt`, and `det/det.txt` under `dir`.
pub fn save_video(video: &Video, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_vec(video).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let path = dir.join("video.json");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    write_motchallenge(&video.ground_truth_result(), dir.join("gt").join("gt.txt"))?;
    write_motchallenge(&video.detection_result(), dir.join("det").join("det.txt"))
}

pub fn load_video(dir: impl AsRef<Path>) -> Result<Video> {
    let path = dir.as_ref().join("video.json");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}
