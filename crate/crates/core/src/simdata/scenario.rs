use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{BBox, FrameObservation, GtObject, Image, DEFAULT_ID_CAPACITY};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Linear,
    Sinusoidal,
    Bounce,
}

impl std::str::FromStr for Motion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Motion::Linear),
            "sinusoidal" => Ok(Motion::Sinusoidal),
            "bounce" => Ok(Motion::Bounce),
            other => Err(Error::InvalidConfig(format!(
                "unknown motion model {other:?}"
            ))),
        }
    }
}

/// An object hidden for `duration` frames starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occlusion {
    pub start: usize,
    pub duration: usize,
    pub object: usize,
}

impl Occlusion {
    pub fn covers(&self, object: usize, frame: usize) -> bool {
        object == self.object && frame >= self.start && frame < self.start + self.duration
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_objects: usize,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub motion: Motion,
    pub occlusions: Vec<Occlusion>,
    /// 0 gives distinct colors, 1 makes every object the same color.
    pub appearance_similarity: f64,
    pub seed: u64,
    /// Object side lengths are drawn from `[min_size, max_size]` (normalized).
    pub min_size: f64,
    pub max_size: f64,
    /// Largest per-frame displacement of an object center (normalized).
    pub max_speed: f64,
    /// Minimum center distance between any two objects in every frame.
    pub min_separation: f64,
    pub capacity: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_objects: 3,
            n_frames: 40,
            height: 32,
            width: 32,
            motion: Motion::Linear,
            occlusions: Vec::new(),
            appearance_similarity: 0.0,
            seed: 0,
            min_size: 0.15,
            max_size: 0.25,
            max_speed: 0.015,
            min_separation: 0.0,
            capacity: DEFAULT_ID_CAPACITY,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_objects == 0 || self.n_frames == 0 {
            return bad("n_objects and n_frames must be positive".into());
        }
        if self.n_objects > self.capacity {
            return bad(format!(
                "n_objects {} exceeds identity capacity {}",
                self.n_objects, self.capacity
            ));
        }
        if self.height == 0 || self.width == 0 {
            return bad("image size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.appearance_similarity) {
            return bad("appearance_similarity must lie in [0,1]".into());
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size && self.max_size < 1.0) {
            return bad("need 0 < min_size <= max_size < 1".into());
        }
        if self.max_speed < 0.0 || self.min_separation < 0.0 {
            return bad("max_speed and min_separation must be non-negative".into());
        }
        for o in &self.occlusions {
            if o.duration == 0 || o.start + o.duration > self.n_frames {
                return bad(format!("occlusion {o:?} outside [0, {})", self.n_frames));
            }
            if o.object >= self.n_objects {
                return bad(format!(
                    "occlusion names object {} of {}",
                    o.object, self.n_objects
                ));
            }
        }
        Ok(())
    }
}

/// A generated (or loaded) clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Video {
    pub name: String,
    pub frames: Vec<FrameObservation>,
}

impl Video {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

struct ObjectPlan {
    size: (f64, f64),
    color: [f32; 3],
    track: Vec<(f64, f64)>,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i as u32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r as f32, g as f32, b as f32]
}

fn plan_track(cfg: &ScenarioConfig, size: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let (hw, hh) = (size.0 / 2.0, size.1 / 2.0);
    let (lo_x, hi_x) = (hw, 1.0 - hw);
    let (lo_y, hi_y) = (hh, 1.0 - hh);
    let n = cfg.n_frames;
    let start = (rng.random_range(lo_x..=hi_x), rng.random_range(lo_y..=hi_y));
    match cfg.motion {
        Motion::Linear => {
            let end = (rng.random_range(lo_x..=hi_x), rng.random_range(lo_y..=hi_y));
            let steps = (n.max(2) - 1) as f64;
            let (mut vx, mut vy) = ((end.0 - start.0) / steps, (end.1 - start.1) / steps);
            let speed = (vx * vx + vy * vy).sqrt();
            if speed > cfg.max_speed && speed > 0.0 {
                let k = cfg.max_speed / speed;
                vx *= k;
                vy *= k;
            }
            (0..n)
                .map(|t| (start.0 + vx * t as f64, start.1 + vy * t as f64))
                .collect()
        }
        Motion::Sinusoidal => {
            let omega = rng.random_range(0.1..0.3);
            let amp_cap = cfg.max_speed / omega;
            let ax = amp_cap.min((start.0 - lo_x).min(hi_x - start.0)).max(0.0);
            let ay = amp_cap.min((start.1 - lo_y).min(hi_y - start.1)).max(0.0);
            let (px, py) = (
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            );
            (0..n)
                .map(|t| {
                    let t = t as f64;
                    (
                        start.0 + ax * ((omega * t + px).sin() - px.sin()),
                        start.1 + ay * ((omega * t + py).sin() - py.sin()),
                    )
                })
                .collect()
        }
        Motion::Bounce => {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let speed = cfg.max_speed * rng.random_range(0.5..=1.0);
            let (mut vx, mut vy) = (speed * angle.cos(), speed * angle.sin());
            let (mut x, mut y) = start;
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push((x, y));
                x += vx;
                y += vy;
                if x < lo_x || x > hi_x {
                    vx = -vx;
                    x = x.clamp(lo_x, hi_x);
                }
                if y < lo_y || y > hi_y {
                    vy = -vy;
                    y = y.clamp(lo_y, hi_y);
                }
            }
            out
        }
    }
}

fn separated_from(plan: &ObjectPlan, others: &[ObjectPlan], min_sep: f64) -> bool {
    others.iter().all(|o| {
        plan.track
            .iter()
            .zip(&o.track)
            .all(|(a, b)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() >= min_sep)
    })
}

const MAX_PLACEMENT_ATTEMPTS: usize = 500;
const MAX_RESTARTS: usize = 20;

/// Generates a deterministic synthetic video. Detections are left empty;
/// see [`crate::simdata::apply_oracle`].
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Video> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let hue0: f64 = rng.random_range(0.0..1.0);
    let base_colors: Vec<[f32; 3]> = (0..cfg.n_objects)
        .map(|j| {
            let value = if j % 2 == 0 { 0.95 } else { 0.7 };
            hsv_to_rgb(hue0 + j as f64 / cfg.n_objects as f64, 0.85, value)
        })
        .collect();
    let mean: [f32; 3] = std::array::from_fn(|c| {
        base_colors.iter().map(|col| col[c]).sum::<f32>() / cfg.n_objects as f32
    });
    let s = cfg.appearance_similarity as f32;
    let colors: Vec<[f32; 3]> = base_colors
        .iter()
        .map(|col| std::array::from_fn(|c| (1.0 - s) * col[c] + s * mean[c]))
        .collect();

    let mut plans = Vec::new();
    // Objects are placed one at a time; a full restart happens when one cannot fit.
    'restart: for _ in 0..MAX_RESTARTS {
        plans.clear();
        for j in 0..cfg.n_objects {
            let mut placed = false;
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let size = (
                    rng.random_range(cfg.min_size..=cfg.max_size),
                    rng.random_range(cfg.min_size..=cfg.max_size),
                );
                let track = plan_track(cfg, size, &mut rng);
                let plan = ObjectPlan {
                    size,
                    color: colors[j],
                    track,
                };
                if cfg.min_separation <= 0.0 || separated_from(&plan, &plans, cfg.min_separation) {
                    plans.push(plan);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'restart;
            }
        }
        break;
    }
    if plans.len() != cfg.n_objects {
        return Err(Error::InvalidConfig(format!(
            "could not place {} objects with separation {}",
            cfg.n_objects, cfg.min_separation
        )));
    }

    let noise = Normal::new(0.0, 0.03).expect("valid std");
    let texture = Normal::new(0.0, 0.05).expect("valid std");
    let mut frames = Vec::with_capacity(cfg.n_frames);
    for t in 0..cfg.n_frames {
        let mut image = Image::filled(cfg.height, cfg.width, 3, 0.0);
        for v in image.data.iter_mut() {
            *v = (0.1 + noise.sample(&mut rng) as f32).clamp(0.0, 1.0);
        }
        let mut gt = Vec::with_capacity(cfg.n_objects);
        for (j, plan) in plans.iter().enumerate() {
            let (cx, cy) = plan.track[t];
            let bbox = BBox::from_center(cx, cy, plan.size.0, plan.size.1)
                .expect("planned boxes stay inside the image");
            let visible = !cfg.occlusions.iter().any(|o| o.covers(j, t));
            if visible {
                draw_box(&mut image, &bbox, plan.color, &texture, &mut rng);
            }
            gt.push(GtObject {
                id: j as u32,
                bbox,
                visible,
            });
        }
        frames.push(FrameObservation {
            frame_index: t,
            image,
            detections: Vec::new(),
            gt_ids: None,
            ground_truth: gt,
        });
    }
    Ok(Video {
        name: format!("synth-{:016x}", cfg.seed),
        frames,
    })
}

fn draw_box(
    image: &mut Image,
    bbox: &BBox,
    color: [f32; 3],
    texture: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) {
    let (h, w) = (image.height as f64, image.width as f64);
    for y in 0..image.height {
        let py = (y as f64 + 0.5) / h;
        if py < bbox.y1 || py > bbox.y2 {
            continue;
        }
        for x in 0..image.width {
            let px = (x as f64 + 0.5) / w;
            if px < bbox.x1 || px > bbox.x2 {
                continue;
            }
            let n = texture.sample(rng) as f32;
            for (c, &base) in color.iter().enumerate() {
                *image.at_mut(y, x, c) = (base + n).clamp(0.0, 1.0);
            }
        }
    }
}
