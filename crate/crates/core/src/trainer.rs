//! End-to-end training: clip sampling with a random temporal gap, a
//! progressive clip-length schedule, the weighted detection + identity loss,
//! AdamW with cosine annealing.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamGrads, Tape, Var};
use crate::decoder::{predict_id, RowRef};
use crate::detector::{DetectorLoss, LossWeights};
use crate::domain::{BBox, FrameObservation};
use crate::error::{Error, Result};
use crate::model::ArMot;
use crate::nn::AdamW;
use crate::scalar::Scalar;
use crate::sequence::{
    build_supervised_frame, build_training_sequences, memory_in_canonical_order, CanonKey,
    ClipFrame, History, IdPolicy, IdentityLabeler, ObjectContent, ObjectEntry, SequenceConfig,
    TokenSequence,
};
use crate::simdata::{Symmetry, Video};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub cosine: bool,
    pub weight_decay: f64,
    /// Clip lengths used in successive, evenly spaced stages of training.
    pub clip_schedule: Vec<usize>,
    pub gap_min: usize,
    pub gap_max: usize,
    pub batch_size: usize,
    pub clips_per_epoch: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Draw the history window uniformly from `1..clip_len` per clip instead of using `window`.
    pub random_window: bool,
    pub window: usize,
    pub lost_entries: bool,
    pub supervise_first: bool,
    /// Hand out training IDs at random instead of smallest-free, so every ID row gets trained.
    pub shuffle_ids: bool,
    /// Apply a random flip/transpose to each training clip.
    pub augment: bool,
    pub lambda_cls: f64,
    pub lambda_l1: f64,
    pub lambda_giou: f64,
    pub lambda_ce: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::oracle();
        Self {
            epochs: 15,
            lr: 6.0e-5,
            cosine: true,
            weight_decay: 0.01,
            clip_schedule: vec![2, 3, 4, 5],
            gap_min: 0,
            gap_max: 3,
            batch_size: 4,
            clips_per_epoch: 160,
            grad_clip: 1.0,
            random_window: true,
            window: 4,
            lost_entries: true,
            supervise_first: false,
            shuffle_ids: true,
            augment: true,
            lambda_cls: w.cls,
            lambda_l1: w.l1,
            lambda_giou: w.giou,
            lambda_ce: w.ce,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            cls: self.lambda_cls,
            l1: self.lambda_l1,
            giou: self.lambda_giou,
            ce: self.lambda_ce,
        }
    }

    pub fn set_weights(&mut self, w: LossWeights) {
        self.lambda_cls = w.cls;
        self.lambda_l1 = w.l1;
        self.lambda_giou = w.giou;
        self.lambda_ce = w.ce;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.clips_per_epoch == 0 {
            return bad("epochs, batch_size and clips_per_epoch must be positive");
        }
        if self.clip_schedule.is_empty() || self.clip_schedule.iter().any(|&c| c < 2) {
            return bad("every clip length must be >= 2");
        }
        if self.gap_min > self.gap_max {
            return bad("gap_min must not exceed gap_max");
        }
        if !self.lr.is_finite() || self.lr <= 0.0 || self.weight_decay < 0.0 || self.grad_clip < 0.0
        {
            return bad("lr must be positive; weight_decay and grad_clip non-negative");
        }
        let w = self.weights();
        if !w.ce.is_finite() || w.ce <= 0.0 || w.cls < 0.0 || w.l1 < 0.0 || w.giou < 0.0 {
            return bad("loss weights must be non-negative with lambda_ce > 0");
        }
        if !self.random_window && self.window == 0 {
            return bad("window must be >= 1");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.clips_per_epoch.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }
}

/// Cosine-annealed rate at `step` of `total`: `lr0·(1 + cos(π·step/total))/2`.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// Epochs (0-based) at which the clip length advances: `ceil(k·epochs/stages)`.
pub fn schedule_switch_epochs(epochs: usize, stages: usize) -> Vec<usize> {
    (1..stages).map(|k| (k * epochs).div_ceil(stages)).collect()
}

/// Clip length used in 0-based `epoch`.
pub fn clip_len_for_epoch(schedule: &[usize], epochs: usize, epoch: usize) -> usize {
    let stage = schedule_switch_epochs(epochs, schedule.len())
        .iter()
        .filter(|&&s| s <= epoch)
        .count();
    schedule[stage]
}

/// Frame indices `start, start+(g+1), …` for a clip.
pub fn clip_indices(start: usize, gap: usize, clip_len: usize) -> Vec<usize> {
    (0..clip_len).map(|k| start + k * (gap + 1)).collect()
}

/// Draws a gap uniformly from `gap_range` and a start uniformly over the valid range.
pub fn sample_clip(
    video_len: usize,
    clip_len: usize,
    gap_range: (usize, usize),
    rng: &mut impl Rng,
) -> Result<(usize, Vec<usize>)> {
    let (gmin, gmax) = gap_range;
    assert!(gmin <= gmax && clip_len >= 1);
    let needed = 1 + (clip_len - 1) * (gmax + 1);
    if video_len < needed {
        return Err(Error::VideoTooShort {
            frames: video_len,
            clip_len,
            gap: gmax,
        });
    }
    let gap = rng.random_range(gmin..=gmax);
    let span = (clip_len - 1) * (gap + 1);
    let start = rng.random_range(0..=video_len - 1 - span);
    Ok((gap, clip_indices(start, gap, clip_len)))
}

/// Loss values of one optimization step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub loss: f64,
    pub ce: f64,
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    /// Number of supervised ID predictions.
    pub targets: usize,
}

/// How one clip's sequences are laid out.
#[derive(Clone, Copy, Debug)]
pub struct ClipLayout {
    pub window: usize,
    pub lost_entries: bool,
    pub supervise_first: bool,
    pub policy: IdPolicy,
}

/// Teacher-forced predictions of one supervised frame.
pub struct FramePrediction {
    pub logits: Var,
    pub sequence: TokenSequence<RowRef>,
    /// Admissible set for each predict position, as used at inference.
    pub admissible: Vec<BTreeSet<usize>>,
}

pub struct ClipOutput {
    pub frames: Vec<FramePrediction>,
    pub detector: Vec<DetectorLoss>,
}

struct PreparedFrame {
    clip: ClipFrame<RowRef>,
    detector: Option<DetectorLoss>,
}

fn prepare_frame<T: Scalar>(
    model: &ArMot<T>,
    tape: &mut Tape<'_, T>,
    frame: &FrameObservation,
) -> Result<PreparedFrame> {
    let (image, features) = model.encode_image(tape, &frame.image)?;
    let image_refs: Vec<RowRef> = (0..image.len()).map(|p| (image.tokens, p)).collect();
    let (objects, keys, identities, detector) = match &model.detector {
        Some(det) => {
            let out = det.forward(tape, features, image.grid_h, image.grid_w);
            let loss = det.loss(tape, &out, &frame.ground_truth);
            let cells: Vec<usize> = loss.assigned.iter().map(|a| a.0).collect();
            let boxes: Vec<BBox> = loss
                .assigned
                .iter()
                .map(|a| frame.ground_truth[a.1].bbox)
                .collect();
            let queries = (!cells.is_empty()).then(|| tape.gather_rows(out.queries, &cells));
            let objects = model.object_tokens(tape, &image, queries, &boxes)?;
            let keys: Vec<CanonKey> = boxes
                .iter()
                .map(|b| CanonKey {
                    confidence: 1.0,
                    x1: b.x1,
                    y1: b.y1,
                })
                .collect();
            let ids = loss
                .assigned
                .iter()
                .map(|a| Some(frame.ground_truth[a.1].id as u64))
                .collect();
            (objects, keys, ids, Some(loss))
        }
        None => {
            let gt_ids = frame.gt_ids.as_ref().ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "frame {} has no gt_ids for training",
                    frame.frame_index
                ))
            })?;
            let dets: Vec<_> = frame.detections.iter().collect();
            let boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
            let queries = if model.discretizer.is_none() && !dets.is_empty() {
                Some(model.query_input(tape, &dets)?)
            } else {
                None
            };
            let objects = model.object_tokens(tape, &image, queries, &boxes)?;
            let keys = dets
                .iter()
                .map(|d| CanonKey {
                    confidence: d.confidence,
                    x1: d.bbox.x1,
                    y1: d.bbox.y1,
                })
                .collect();
            let ids = gt_ids.iter().map(|g| g.map(u64::from)).collect();
            (objects, keys, ids, None)
        }
    };
    let objects: Vec<ObjectEntry<RowRef>> = objects
        .into_iter()
        .zip(keys)
        .enumerate()
        .map(|(index, (content, key))| ObjectEntry {
            content,
            key,
            index,
        })
        .collect();
    let mut clip = ClipFrame {
        frame: frame.frame_index,
        image: image_refs,
        objects,
        identities,
    };
    clip.canonicalize();
    Ok(PreparedFrame { clip, detector })
}

fn admissible_sets(
    seq: &TokenSequence<RowRef>,
    vocab: &crate::domain::IdVocabulary,
) -> Vec<BTreeSet<usize>> {
    let Some(&first) = seq.predict_positions.first() else {
        return Vec::new();
    };
    let history = seq.referenced_ids(first, vocab);
    let mut used = BTreeSet::new();
    let mut out = Vec::with_capacity(seq.target_ids.len());
    for &t in &seq.target_ids {
        let mut a: BTreeSet<usize> = history.difference(&used).copied().collect();
        a.insert(vocab.new_token());
        out.push(a);
        if t != vocab.new_token() {
            used.insert(t);
        }
    }
    out
}

/// Runs the model over one clip with teacher forcing.
pub fn forward_clip<T: Scalar>(
    model: &ArMot<T>,
    tape: &mut Tape<'_, T>,
    frames: &[&FrameObservation],
    layout: &ClipLayout,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<ClipOutput> {
    let mut prepared = Vec::with_capacity(frames.len());
    for f in frames {
        prepared.push(prepare_frame(model, tape, f)?);
    }
    let detector: Vec<DetectorLoss> = prepared
        .iter_mut()
        .filter_map(|p| p.detector.take())
        .collect();
    let clip: Vec<ClipFrame<RowRef>> = prepared.into_iter().map(|p| p.clip).collect();
    let mut out = Vec::new();

    match &model.tmf {
        None => {
            let seq_cfg = SequenceConfig {
                window: layout.window,
                history_images: model.cfg.history_images,
                current_image: model.cfg.current_image,
                lost_entries: layout.lost_entries,
                supervise_first: layout.supervise_first,
            };
            for sf in build_training_sequences(&clip, &seq_cfg, &model.vocab, layout.policy)? {
                if sf.sequence.predict_positions.is_empty() {
                    continue;
                }
                let res = model
                    .decoder
                    .forward(tape, &sf.sequence, rng.as_deref_mut())?;
                out.push(FramePrediction {
                    logits: res.logits.expect("has predict positions"),
                    admissible: admissible_sets(&sf.sequence, &model.vocab),
                    sequence: sf.sequence,
                });
            }
        }
        Some(tmf) => {
            if clip.len() < 2 {
                return Err(Error::ClipTooShort {
                    needed: 2,
                    got: clip.len(),
                });
            }
            let mut labeler = IdentityLabeler::new(model.vocab, layout.policy);
            // Each memory remembers the canonical key of its latest detection.
            let mut memory: BTreeMap<usize, (Var, CanonKey)> = BTreeMap::new();
            for (i, frame) in clip.iter().enumerate() {
                let history = History::Memory(memory_in_canonical_order(
                    memory.iter().map(|(&id, &(v, key))| ((v, 0), id, key)),
                ));
                let referenced: BTreeSet<usize> = memory.keys().copied().collect();
                let (targets, concrete) = labeler.label_frame(&frame.identities, &referenced)?;
                let image = model.cfg.current_image.then_some(frame.image.as_slice());
                let seq =
                    build_supervised_frame(frame.frame, &history, image, &frame.objects, &targets);
                if seq.predict_positions.is_empty() {
                    continue;
                }
                let res = model.decoder.forward(tape, &seq, rng.as_deref_mut())?;
                let mut updates = Vec::with_capacity(frame.objects.len());
                for (k, entry) in frame.objects.iter().enumerate() {
                    let ObjectContent::Token(token) = entry.content else {
                        return Err(Error::InvalidConfig(
                            "memory fusion needs continuous object tokens".into(),
                        ));
                    };
                    let hidden = tape.slice_rows(res.hidden, seq.predict_positions[k] - 1, 1);
                    let embed = tape.stack_rows(&[token]);
                    let prev = memory.get(&concrete[k]).map(|m| m.0);
                    let updated = tmf.update(tape, hidden, prev, embed)?;
                    updates.push((concrete[k], (updated, entry.key)));
                }
                // Rebound identities start a fresh memory.
                for (id, _) in &updates {
                    if !referenced.contains(id) {
                        memory.remove(id);
                    }
                }
                memory.extend(updates);
                if i > 0 || layout.supervise_first {
                    out.push(FramePrediction {
                        logits: res.logits.expect("has predict positions"),
                        admissible: admissible_sets(&seq, &model.vocab),
                        sequence: seq,
                    });
                }
            }
        }
    }
    Ok(ClipOutput {
        frames: out,
        detector,
    })
}

fn layout_for(cfg: &TrainConfig, clip_len: usize, rng: &mut ChaCha8Rng) -> ClipLayout {
    let window = if cfg.random_window {
        rng.random_range(1..clip_len.max(2))
    } else {
        cfg.window
    };
    ClipLayout {
        window,
        lost_entries: cfg.lost_entries,
        supervise_first: cfg.supervise_first,
        policy: if cfg.shuffle_ids {
            IdPolicy::Shuffled(rng.random())
        } else {
            IdPolicy::SmallestFree
        },
    }
}

/// Builds the weighted loss for a batch of clips on `tape`. Returns the loss
/// variable (when any term exists) and its components.
fn batch_loss<T: Scalar>(
    model: &ArMot<T>,
    tape: &mut Tape<'_, T>,
    clips: &[Vec<&FrameObservation>],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Option<Var>, StepStats)> {
    let mut ce_terms: Vec<(Var, usize)> = Vec::new();
    let mut det_terms: Vec<DetectorLoss> = Vec::new();
    for clip in clips {
        let layout = layout_for(cfg, clip.len(), rng);
        let dropout_rng = (model.cfg.dropout > 0.0).then_some(&mut *rng);
        let out = forward_clip(model, tape, clip, &layout, dropout_rng)?;
        for f in out.frames {
            let targets: Vec<(usize, usize)> =
                f.sequence.target_ids.iter().copied().enumerate().collect();
            let ce = tape.cross_entropy(f.logits, &targets);
            ce_terms.push((ce, targets.len()));
        }
        det_terms.extend(out.detector);
    }
    let w = cfg.weights();
    let mut stats = StepStats::default();
    let n: usize = ce_terms.iter().map(|t| t.1).sum();
    stats.targets = n;
    let mut total: Option<Var> = None;
    let mut add = |tape: &mut Tape<'_, T>, v: Var| {
        total = Some(match total {
            Some(t) => tape.add(t, v),
            None => v,
        });
    };
    if n > 0 {
        let mut ce: Option<Var> = None;
        for (v, k) in &ce_terms {
            let part = tape.scale(*v, T::lit(*k as f64 / n as f64));
            ce = Some(match ce {
                Some(c) => tape.add(c, part),
                None => part,
            });
        }
        let ce = ce.expect("n > 0");
        stats.ce = tape.scalar(ce).as_f64();
        let weighted = tape.scale(ce, T::lit(w.ce));
        add(tape, weighted);
    }
    if !det_terms.is_empty() {
        let mean_of = |tape: &mut Tape<'_, T>, vars: Vec<Var>| -> Option<Var> {
            if vars.is_empty() {
                return None;
            }
            let k = vars.len();
            let s = tape.concat_rows(&vars);
            let s = tape.sum(s);
            Some(tape.scale(s, T::lit(1.0 / k as f64)))
        };
        let cls = mean_of(tape, det_terms.iter().map(|d| d.cls).collect());
        let l1 = mean_of(tape, det_terms.iter().filter_map(|d| d.l1).collect());
        let giou = mean_of(tape, det_terms.iter().filter_map(|d| d.giou).collect());
        for (var, weight, slot) in [
            (cls, w.cls, &mut stats.cls),
            (l1, w.l1, &mut stats.l1),
            (giou, w.giou, &mut stats.giou),
        ] {
            if let Some(v) = var {
                *slot = tape.scalar(v).as_f64();
                if weight > 0.0 {
                    let weighted = tape.scale(v, T::lit(weight));
                    add(tape, weighted);
                }
            }
        }
    }
    if let Some(t) = total {
        stats.loss = tape.scalar(t).as_f64();
    }
    Ok((total, stats))
}

/// Loss of a batch without updating parameters.
pub fn evaluate_loss<T: Scalar>(
    model: &ArMot<T>,
    clips: &[Vec<&FrameObservation>],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<StepStats> {
    let mut tape = Tape::new(&model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(batch_loss(model, &mut tape, clips, cfg, &mut rng)?.1)
}

/// One optimization step on a batch of clips.
pub fn train_step<T: Scalar>(
    model: &mut ArMot<T>,
    opt: &mut AdamW<T>,
    clips: &[Vec<&FrameObservation>],
    cfg: &TrainConfig,
    lr: f64,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StepStats> {
    let (stats, grads): (StepStats, Option<ParamGrads<T>>) = {
        let mut tape = Tape::new(&model.store);
        let (total, stats) = batch_loss(model, &mut tape, clips, cfg, rng)?;
        let grads = total.map(|t| tape.backward(t).into_params());
        (stats, grads)
    };
    if !stats.loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            total: stats.loss,
            ce: stats.ce,
        });
    }
    if let Some(mut g) = grads {
        if !g.all_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                total: stats.loss,
                ce: stats.ce,
            });
        }
        if cfg.grad_clip > 0.0 {
            let norm = g.global_norm().as_f64();
            if norm > cfg.grad_clip {
                g.scale(T::lit(cfg.grad_clip / norm));
            }
        }
        opt.step(&mut model.store, &g, lr);
    }
    Ok(stats)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub epoch_loss: Vec<f64>,
    pub epoch_ce: Vec<f64>,
    pub final_lr: f64,
    pub seconds: f64,
}

/// Trains `model` on `videos`, writing a `step,loss,ce,lr` line per step to `log`.
pub fn run_training<T: Scalar>(
    model: &mut ArMot<T>,
    videos: &[Video],
    cfg: &TrainConfig,
    log: &mut dyn Write,
) -> Result<TrainReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(&model.store, cfg.weight_decay);
    let total = cfg.total_steps();
    let io = |e| Error::io("training log", e);
    writeln!(log, "step,loss,ce,lr").map_err(io)?;
    let longest = (0..cfg.epochs)
        .map(|e| clip_len_for_epoch(&cfg.clip_schedule, cfg.epochs, e))
        .max()
        .unwrap_or(1);
    let needed = 1 + (longest - 1) * (cfg.gap_max + 1);
    if !videos.iter().any(|v| v.len() >= needed) {
        return Err(Error::VideoTooShort {
            frames: videos.iter().map(|v| v.len()).max().unwrap_or(0),
            clip_len: longest,
            gap: cfg.gap_max,
        });
    }
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let clip_len = clip_len_for_epoch(&cfg.clip_schedule, cfg.epochs, epoch);
        let needed = 1 + (clip_len - 1) * (cfg.gap_max + 1);
        let usable: Vec<&Video> = videos.iter().filter(|v| v.len() >= needed).collect();
        if usable.is_empty() {
            return Err(Error::VideoTooShort {
                frames: videos.iter().map(|v| v.len()).max().unwrap_or(0),
                clip_len,
                gap: cfg.gap_max,
            });
        }
        let (mut loss_sum, mut ce_sum) = (0.0, 0.0);
        let mut remaining = cfg.clips_per_epoch;
        for _ in 0..cfg.steps_per_epoch() {
            let batch_n = remaining.min(cfg.batch_size);
            remaining -= batch_n;
            let mut owned: Vec<Vec<FrameObservation>> = Vec::new();
            let mut picked = Vec::with_capacity(batch_n);
            for _ in 0..batch_n {
                let v = usable[rng.random_range(0..usable.len())];
                let (_, idx) =
                    sample_clip(v.len(), clip_len, (cfg.gap_min, cfg.gap_max), &mut rng)?;
                let frames: Vec<&FrameObservation> = idx.iter().map(|&i| &v.frames[i]).collect();
                let sym = if cfg.augment {
                    let img = &frames[0].image;
                    Symmetry::sample(img.height == img.width, &mut rng)
                } else {
                    Symmetry::default()
                };
                if sym.is_identity() {
                    picked.push(Err(frames));
                } else {
                    picked.push(Ok(owned.len()));
                    owned.push(frames.into_iter().map(|f| sym.frame(f)).collect());
                }
            }
            let clips: Vec<Vec<&FrameObservation>> = picked
                .into_iter()
                .map(|p| match p {
                    Ok(i) => owned[i].iter().collect(),
                    Err(frames) => frames,
                })
                .collect();
            let lr = if cfg.cosine {
                cosine_lr(cfg.lr, step, total)
            } else {
                cfg.lr
            };
            let stats = train_step(model, &mut opt, &clips, cfg, lr, step, &mut rng)?;
            writeln!(log, "{step},{:.6},{:.6},{lr:.6e}", stats.loss, stats.ce).map_err(io)?;
            loss_sum += stats.loss;
            ce_sum += stats.ce;
            report.final_lr = lr;
            step += 1;
        }
        let n = cfg.steps_per_epoch() as f64;
        report.epoch_loss.push(loss_sum / n);
        report.epoch_ce.push(ce_sum / n);
        log::info!(
            "epoch {}/{} clip_len {clip_len} loss {:.4} ce {:.4}",
            epoch + 1,
            cfg.epochs,
            loss_sum / n,
            ce_sum / n
        );
    }
    report.steps = step;
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdAccuracy {
    pub correct: usize,
    pub total: usize,
}

impl IdAccuracy {
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Teacher-forced identity accuracy on clips drawn from `videos`, using the
/// inference admissible set and full clip history.
pub fn id_accuracy<T: Scalar>(
    model: &ArMot<T>,
    videos: &[Video],
    clip_len: usize,
    clips_per_video: usize,
    policy: IdPolicy,
    seed: u64,
) -> Result<IdAccuracy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = ClipLayout {
        window: clip_len.saturating_sub(1).max(1),
        lost_entries: true,
        supervise_first: false,
        policy,
    };
    let mut acc = IdAccuracy::default();
    for v in videos {
        for _ in 0..clips_per_video {
            let (_, idx) = sample_clip(v.len(), clip_len, (0, 0), &mut rng)?;
            let frames: Vec<&FrameObservation> = idx.iter().map(|&i| &v.frames[i]).collect();
            let mut tape = Tape::new(&model.store);
            let out = forward_clip(model, &mut tape, &frames, &layout, None)?;
            for f in out.frames {
                let logits = tape.value(f.logits);
                for (k, &target) in f.sequence.target_ids.iter().enumerate() {
                    let (pred, _) = predict_id(logits.row(k), &f.admissible[k]);
                    acc.total += 1;
                    acc.correct += usize::from(pred == target);
                }
            }
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::simdata::{generate_suite, SuiteConfig};

    #[test]
    fn clip_index_examples() {
        assert_eq!(clip_indices(0, 2, 3), vec![0, 3, 6]);
        assert_eq!(clip_indices(5, 0, 2), vec![5, 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (g, idx) = sample_clip(10, 2, (0, 0), &mut rng).unwrap();
        assert_eq!(g, 0);
        assert_eq!(idx[1], idx[0] + 1);
        assert!(matches!(
            sample_clip(5, 3, (2, 2), &mut rng),
            Err(Error::VideoTooShort { .. })
        ));
    }

    /// Chi-square goodness of fit of 10,000 sampled gaps against the uniform
    /// law on {1..10}. Critical value for 9 degrees of freedom at p = 0.01 is 21.666.
    #[test]
    fn gap_distribution_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 10];
        let n = 10_000;
        for _ in 0..n {
            let (g, idx) = sample_clip(100, 3, (1, 10), &mut rng).unwrap();
            assert!(*idx.last().unwrap() < 100);
            counts[g - 1] += 1;
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 21.666, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn cosine_schedule_closed_form() {
        let lr0 = 6.0e-5;
        assert_eq!(cosine_lr(lr0, 0, 100), lr0);
        assert!((cosine_lr(lr0, 50, 100) - 0.5 * lr0).abs() < 1e-18);
        assert!((cosine_lr(lr0, 25, 100) / lr0 - 0.853_553_390_593_273_8).abs() < 1e-12);
        assert!(cosine_lr(lr0, 100, 100).abs() < 1e-18);
        for s in 0..=100 {
            let expected = lr0 * (1.0 + (std::f64::consts::PI * s as f64 / 100.0).cos()) / 2.0;
            assert_eq!(cosine_lr(lr0, s, 100), expected);
        }
    }

    #[test]
    fn clip_length_schedule() {
        assert_eq!(schedule_switch_epochs(15, 4), vec![4, 8, 12]);
        let s = [2, 3, 4, 5];
        let lens: Vec<usize> = (0..15).map(|e| clip_len_for_epoch(&s, 15, e)).collect();
        assert_eq!(lens, vec![2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5]);
        assert_eq!(clip_len_for_epoch(&s, 15, 12), 5);
    }

    fn tiny_model(tmf: bool, detector: bool) -> ArMot<f64> {
        ArMot::new(ModelConfig {
            d_img: 8,
            d_lm: 8,
            d_det: 46,
            layers: 1,
            heads: 2,
            ff: 16,
            capacity: 8,
            tmf,
            detector,
            ..Default::default()
        })
        .unwrap()
    }

    fn clips(videos: &[Video], len: usize) -> Vec<Vec<&FrameObservation>> {
        videos
            .iter()
            .map(|v| v.frames[..len].iter().collect())
            .collect()
    }

    #[test]
    fn zero_detection_weights_leave_only_identity_loss() {
        let videos = generate_suite(&SuiteConfig {
            oracle: crate::simdata::OracleConfig {
                d_det: 46,
                ..Default::default()
            },
            ..SuiteConfig::training(2, 1)
        })
        .unwrap();
        let model = tiny_model(false, true);
        let mut cfg = TrainConfig {
            random_window: false,
            window: 2,
            ..Default::default()
        };
        cfg.set_weights(LossWeights {
            cls: 0.0,
            l1: 0.0,
            giou: 0.0,
            ce: 1.0,
        });
        let s = evaluate_loss(&model, &clips(&videos, 3), &cfg, 0).unwrap();
        assert_eq!(s.loss, s.ce);
        assert!(s.cls > 0.0 && s.l1 > 0.0 && s.giou > 0.0);

        cfg.set_weights(LossWeights {
            cls: 0.0,
            l1: 0.0,
            giou: 0.0,
            ce: 2.0,
        });
        let doubled = evaluate_loss(&model, &clips(&videos, 3), &cfg, 0).unwrap();
        assert_eq!(doubled.loss, 2.0 * s.ce);

        cfg.set_weights(LossWeights::toy_detector());
        let full = evaluate_loss(&model, &clips(&videos, 3), &cfg, 0).unwrap();
        let expected = 2.0 * full.cls + 5.0 * full.l1 + 2.0 * full.giou + full.ce;
        assert!((full.loss - expected).abs() < 1e-12);
        assert!(full.loss >= 0.0);
    }

    #[test]
    fn training_is_deterministic_and_logs_steps() {
        let videos = generate_suite(&SuiteConfig {
            oracle: crate::simdata::OracleConfig {
                d_det: 46,
                ..Default::default()
            },
            ..SuiteConfig::training(3, 2)
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            clips_per_epoch: 4,
            batch_size: 2,
            lr: 1e-3,
            ..Default::default()
        };
        let run = || {
            let mut m = tiny_model(false, false);
            let mut log = Vec::new();
            let r = run_training(&mut m, &videos, &cfg, &mut log).unwrap();
            (r, String::from_utf8(log).unwrap())
        };
        let (a, log_a) = run();
        let (b, log_b) = run();
        assert_eq!(a.epoch_loss, b.epoch_loss);
        assert_eq!(log_a, log_b);
        let lines: Vec<&str> = log_a.lines().collect();
        assert_eq!(lines[0], "step,loss,ce,lr");
        assert_eq!(lines.len(), 1 + 4);
        assert_eq!(lines[1].split(',').count(), 4);
    }

    #[test]
    fn tmf_training_reduces_loss() {
        let videos = generate_suite(&SuiteConfig {
            oracle: crate::simdata::OracleConfig {
                d_det: 46,
                ..Default::default()
            },
            ..SuiteConfig::easy(1, 3)
        })
        .unwrap();
        let mut model = tiny_model(true, false);
        let cfg = TrainConfig {
            shuffle_ids: false,
            ..Default::default()
        };
        let batch = clips(&videos, 3);
        let before = evaluate_loss(&model, &batch, &cfg, 0).unwrap();
        let mut opt = AdamW::new(&model.store, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for step in 0..60 {
            train_step(&mut model, &mut opt, &batch, &cfg, 1e-2, step, &mut rng).unwrap();
        }
        let after = evaluate_loss(&model, &batch, &cfg, 0).unwrap();
        assert!(after.ce < 0.5 * before.ce, "{} -> {}", before.ce, after.ce);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let videos = generate_suite(&SuiteConfig {
            oracle: crate::simdata::OracleConfig {
                d_det: 46,
                ..Default::default()
            },
            ..SuiteConfig::easy(1, 3)
        })
        .unwrap();
        let mut model = tiny_model(false, false);
        let id = model.decoder.embed;
        model.store.get_mut(id)[[0, 0]] = f64::NAN;
        let mut opt = AdamW::new(&model.store, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = train_step(
            &mut model,
            &mut opt,
            &clips(&videos, 2),
            &TrainConfig::default(),
            1e-3,
            7,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { step: 7, .. }), "{err}");
    }
}
