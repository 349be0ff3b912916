//! Frame-by-frame tracking: a sliding window of past frames plus the temporal
//! context manager, or per-track fused memories.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::decoder::{predict_id, RowRef};
use crate::domain::{
    assign_free_id, BBox, FrameObservation, IdVocabulary, ObjectRepr, TrackContext,
};
use crate::error::{Error, Result};
use crate::model::ArMot;
use crate::scalar::Scalar;
use crate::sequence::{
    build_frame_block, build_inference_prefix, canonical_order, memory_in_canonical_order,
    CanonKey, History, LostEntry, ObjectContent, ObjectEntry, TokenSequence,
};
use crate::simdata::{MotRecord, TrackingResult, Video};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackMode {
    #[default]
    Window,
    Tmf,
}

impl std::str::FromStr for TrackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window" => Ok(TrackMode::Window),
            "tmf" => Ok(TrackMode::Tmf),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode {other:?} (expected window or tmf)"
            ))),
        }
    }
}

impl std::fmt::Display for TrackMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrackMode::Window => "window",
            TrackMode::Tmf => "tmf",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub mode: TrackMode,
    /// Past frames kept as reference blocks in window mode.
    pub window: usize,
    pub tau_det: f64,
    pub tau_loss: usize,
    /// Append lost tracks from the context manager after the window blocks.
    pub lost_entries: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            mode: TrackMode::Window,
            window: 4,
            tau_det: 0.5,
            tau_loss: 10,
            lost_entries: true,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == TrackMode::Window && self.window == 0 {
            return Err(Error::InvalidConfig("window mode needs window >= 1".into()));
        }
        if self.tau_loss == 0 {
            return Err(Error::InvalidConfig("tau_loss must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau_det) {
            return Err(Error::InvalidConfig(format!(
                "tau_det {} outside [0,1]",
                self.tau_det
            )));
        }
        Ok(())
    }
}

/// Track table kept between frames. Counts frames by processing step.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalContext<T> {
    pub tau_loss: usize,
    vocab: IdVocabulary,
    tracks: BTreeMap<usize, TrackContext<T>>,
    next_output: u64,
}

impl<T: Clone> TemporalContext<T> {
    pub fn new(vocab: IdVocabulary, tau_loss: usize) -> Self {
        Self {
            tau_loss,
            vocab,
            tracks: BTreeMap::new(),
            next_output: 0,
        }
    }

    pub fn tracks(&self) -> &BTreeMap<usize, TrackContext<T>> {
        &self.tracks
    }

    pub fn ids(&self) -> BTreeSet<usize> {
        self.tracks.keys().copied().collect()
    }

    /// Ages every track to `step` and drops those lost for more than
    /// `tau_loss` frames. Returns the pruned tracks.
    pub fn begin_frame(&mut self, step: usize) -> Vec<TrackContext<T>> {
        for t in self.tracks.values_mut() {
            t.n_lost = step - t.last_seen;
        }
        let tau = self.tau_loss;
        let expired: Vec<usize> = self
            .tracks
            .iter()
            .filter(|(_, t)| t.n_lost > tau)
            .map(|(&id, _)| id)
            .collect();
        expired
            .into_iter()
            .filter_map(|id| self.tracks.remove(&id))
            .collect()
    }

    /// Records the frame's outcome: `matched` tracks are refreshed, each entry
    /// of `fresh` gets a free ID and a new output identity. Returns
    /// `(track_id, output_id)` for the fresh tracks.
    pub fn commit(
        &mut self,
        step: usize,
        matched: Vec<(usize, ObjectRepr<T>)>,
        fresh: Vec<ObjectRepr<T>>,
    ) -> Result<Vec<(usize, u64)>> {
        for (id, latest) in matched {
            let t = self
                .tracks
                .get_mut(&id)
                .unwrap_or_else(|| panic!("matched ID {id} is not a live track"));
            t.latest = latest;
            t.n_lost = 0;
            t.last_seen = step;
        }
        let mut taken = self.ids();
        let mut out = Vec::with_capacity(fresh.len());
        for latest in fresh {
            let id = assign_free_id(&taken, &self.vocab)?;
            taken.insert(id);
            let output_id = self.next_output;
            self.next_output += 1;
            self.tracks.insert(
                id,
                TrackContext {
                    track_id: id,
                    output_id,
                    latest,
                    n_lost: 0,
                    last_seen: step,
                },
            );
            out.push((id, output_id));
        }
        Ok(out)
    }
}

/// One tracked object in a frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackedObject {
    pub output_id: u64,
    pub track_id: usize,
    pub bbox: BBox,
    /// Detection confidence.
    pub confidence: f64,
    /// Probability of the chosen ID within the admissible set.
    pub id_confidence: f64,
    pub is_new: bool,
    /// Index of the source detection in the frame (detector output in detector mode).
    pub detection: usize,
}

struct PastFrame<T> {
    step: usize,
    frame: usize,
    image: Vec<Vec<T>>,
    /// Object, vocabulary ID and output identity.
    pairs: Vec<(ObjectEntry<Vec<T>>, usize, u64)>,
}

struct FrameObjects {
    sources: Vec<usize>,
    boxes: Vec<BBox>,
    confidences: Vec<f64>,
    entries: Vec<ObjectEntry<RowRef>>,
    image: Vec<RowRef>,
}

fn row_of<T: Scalar>(tape: &Tape<'_, T>, r: &RowRef) -> Vec<T> {
    tape.value(r.0).row(r.1).to_vec()
}

fn repr_of<T: Scalar>(tape: &Tape<'_, T>, content: &ObjectContent<RowRef>) -> ObjectRepr<T> {
    match content {
        ObjectContent::Token(r) => ObjectRepr::Token(row_of(tape, r)),
        ObjectContent::Bins(b) => ObjectRepr::Bins(*b),
    }
}

fn content_of<T: Clone>(repr: &ObjectRepr<T>) -> ObjectContent<Vec<T>> {
    match repr {
        ObjectRepr::Token(v) => ObjectContent::Token(v.clone()),
        ObjectRepr::Bins(b) => ObjectContent::Bins(*b),
    }
}

/// Online tracking state for one video.
pub struct Tracker<'m, T: Scalar> {
    model: &'m ArMot<T>,
    cfg: InferConfig,
    context: TemporalContext<T>,
    /// Memory token and canonical key of the latest detection, per track.
    memory: BTreeMap<usize, (Vec<T>, CanonKey)>,
    past: VecDeque<PastFrame<T>>,
    step: usize,
    dumps: Option<Vec<String>>,
}

impl<'m, T: Scalar> Tracker<'m, T> {
    pub fn new(model: &'m ArMot<T>, cfg: InferConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode == TrackMode::Tmf && model.tmf.is_none() {
            return Err(Error::ModelMismatch(
                "tmf mode needs a model trained with memory fusion".into(),
            ));
        }
        Ok(Self {
            model,
            context: TemporalContext::new(model.vocab, cfg.tau_loss),
            cfg,
            memory: BTreeMap::new(),
            past: VecDeque::new(),
            step: 0,
            dumps: None,
        })
    }

    /// Keeps a debug dump of every prefix fed to the decoder.
    pub fn record_dumps(&mut self) {
        self.dumps = Some(Vec::new());
    }

    pub fn dumps(&self) -> &[String] {
        self.dumps.as_deref().unwrap_or(&[])
    }

    pub fn context(&self) -> &TemporalContext<T> {
        &self.context
    }

    fn objects(&self, tape: &mut Tape<'_, T>, frame: &FrameObservation) -> Result<FrameObjects> {
        let model = self.model;
        let (image, features) = model.encode_image(tape, &frame.image)?;
        let (sources, boxes, confidences, keys, contents) = match &model.detector {
            Some(det) => {
                let out = det.forward(tape, features, image.grid_h, image.grid_w);
                let found = det.detections(tape, &out, self.cfg.tau_det);
                let cells: Vec<usize> = found.iter().map(|f| f.0).collect();
                let boxes: Vec<BBox> = found.iter().map(|f| f.1.bbox).collect();
                let queries = (!cells.is_empty()).then(|| tape.gather_rows(out.queries, &cells));
                let contents = model.object_tokens(tape, &image, queries, &boxes)?;
                let keys = found
                    .iter()
                    .map(|(_, d)| CanonKey {
                        confidence: d.confidence,
                        x1: d.bbox.x1,
                        y1: d.bbox.y1,
                    })
                    .collect::<Vec<_>>();
                let sources = (0..boxes.len()).collect();
                (
                    sources,
                    boxes,
                    found.iter().map(|f| f.1.confidence).collect(),
                    keys,
                    contents,
                )
            }
            None => {
                frame.validate(model.cfg.patch, model.cfg.d_det)?;
                let (sources, dets): (Vec<usize>, Vec<_>) = frame
                    .detections
                    .iter()
                    .enumerate()
                    .filter(|(_, d)| d.confidence >= self.cfg.tau_det)
                    .unzip();
                let enc_boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
                let queries = if model.discretizer.is_none() && !dets.is_empty() {
                    Some(model.query_input(tape, &dets)?)
                } else {
                    None
                };
                let contents = model.object_tokens(tape, &image, queries, &enc_boxes)?;
                let keys = dets
                    .iter()
                    .map(|d| CanonKey {
                        confidence: d.confidence,
                        x1: d.bbox.x1,
                        y1: d.bbox.y1,
                    })
                    .collect();
                (
                    sources,
                    enc_boxes,
                    dets.iter().map(|d| d.confidence).collect(),
                    keys,
                    contents,
                )
            }
        };
        let order = canonical_order(&keys);
        let entries = order
            .iter()
            .map(|&i| ObjectEntry {
                content: contents[i].clone(),
                key: keys[i],
                index: i,
            })
            .collect();
        Ok(FrameObjects {
            sources,
            boxes,
            confidences,
            entries,
            image: (0..image.len()).map(|p| (image.tokens, p)).collect(),
        })
    }

    /// Value-level history for the current step.
    fn history(&self) -> History<Vec<T>> {
        let tracks = self.context.tracks();
        match self.cfg.mode {
            TrackMode::Tmf => {
                History::Memory(memory_in_canonical_order(tracks.keys().filter_map(|id| {
                    self.memory.get(id).map(|(m, key)| (m.clone(), *id, *key))
                })))
            }
            TrackMode::Window => {
                let start = self.step.saturating_sub(self.cfg.window);
                let live =
                    |id: usize, output: u64| tracks.get(&id).is_some_and(|t| t.output_id == output);
                let mut in_window = BTreeSet::new();
                let blocks = self
                    .past
                    .iter()
                    .filter(|p| p.step >= start)
                    .map(|p| {
                        let pairs: Vec<(ObjectEntry<Vec<T>>, usize)> = p
                            .pairs
                            .iter()
                            .filter(|(_, id, out)| live(*id, *out))
                            .map(|(e, id, _)| (e.clone(), *id))
                            .collect();
                        in_window.extend(pairs.iter().map(|(_, id)| *id));
                        let image = self.model.cfg.history_images.then_some(p.image.as_slice());
                        build_frame_block(p.frame, image, &pairs)
                    })
                    .collect();
                let mut lost: Vec<(usize, usize, ObjectContent<Vec<T>>)> = Vec::new();
                if self.cfg.lost_entries {
                    lost = tracks
                        .values()
                        .filter(|t| !in_window.contains(&t.track_id))
                        .map(|t| (t.last_seen, t.track_id, content_of(&t.latest)))
                        .collect();
                    lost.sort_by_key(|(seen, id, _)| (*seen, *id));
                }
                History::Window {
                    blocks,
                    lost: lost
                        .into_iter()
                        .map(|(_, id, content)| LostEntry {
                            track: id,
                            content,
                            id,
                        })
                        .collect(),
                }
            }
        }
    }

    /// Tracks one frame and advances the state.
    pub fn track_frame(&mut self, frame: &FrameObservation) -> Result<Vec<TrackedObject>> {
        let model = self.model;
        let vocab = model.vocab;
        let step = self.step;
        for t in self.context.begin_frame(step) {
            self.memory.remove(&t.track_id);
        }
        let mut tape = Tape::new(&model.store);
        let objs = self.objects(&mut tape, frame)?;

        // Move stored history rows onto this frame's tape.
        let value_history = self.history();
        let mut bank: Vec<Vec<T>> = Vec::new();
        let indexed = value_history.map(|v| {
            bank.push(v.clone());
            bank.len() - 1
        });
        let history: History<RowRef> = if bank.is_empty() {
            indexed.map(|_| unreachable!("empty bank"))
        } else {
            let d = bank[0].len();
            let flat: Vec<T> = bank.iter().flatten().copied().collect();
            let var = tape.input(
                Array2::from_shape_vec((bank.len(), d), flat)
                    .map_err(|e| Error::Shape(e.to_string()))?,
            );
            indexed.map(|&i| (var, i))
        };
        let history_len = history.slots().len();
        let image = model.cfg.current_image.then_some(objs.image.as_slice());

        let mut answered: Vec<(ObjectEntry<RowRef>, usize)> =
            Vec::with_capacity(objs.entries.len());
        let mut used = BTreeSet::new();
        let mut reference: Option<BTreeSet<usize>> = None;
        let mut hidden: Vec<(Var, usize)> = Vec::with_capacity(objs.entries.len());
        let mut probs = Vec::with_capacity(objs.entries.len());
        for entry in &objs.entries {
            let prefix: TokenSequence<RowRef> =
                build_inference_prefix(frame.frame_index, &history, image, &answered, entry);
            let reference =
                reference.get_or_insert_with(|| prefix.referenced_ids(history_len, &vocab));
            let out = model.decoder.forward(&mut tape, &prefix, None)?;
            if let Some(d) = self.dumps.as_mut() {
                d.push(prefix.dump(|r| {
                    let row = tape.value(r.0).row(r.1).to_owned();
                    row.iter()
                        .map(|x| x.as_f64() * x.as_f64())
                        .sum::<f64>()
                        .sqrt()
                }));
            }
            let mut admissible: BTreeSet<usize> = reference.difference(&used).copied().collect();
            admissible.insert(vocab.new_token());
            let logits = tape
                .value(out.logits.expect("prefix has a predict position"))
                .to_owned();
            let (id, p) = predict_id(logits.row(0), &admissible);
            if !vocab.is_new(id) {
                used.insert(id);
            }
            hidden.push((out.hidden, prefix.len() - 1));
            probs.push(p);
            answered.push((entry.clone(), id));
        }

        // Commit to the context manager.
        let matched: Vec<(usize, ObjectRepr<T>)> = answered
            .iter()
            .filter(|(_, id)| !vocab.is_new(*id))
            .map(|(e, id)| (*id, repr_of(&tape, &e.content)))
            .collect();
        let fresh: Vec<ObjectRepr<T>> = answered
            .iter()
            .filter(|(_, id)| vocab.is_new(*id))
            .map(|(e, _)| repr_of(&tape, &e.content))
            .collect();
        let mut fresh_ids = self.context.commit(step, matched, fresh)?.into_iter();
        let final_ids: Vec<(usize, bool)> = answered
            .iter()
            .map(|(_, id)| {
                if vocab.is_new(*id) {
                    (
                        fresh_ids.next().expect("one fresh ID per new object").0,
                        true,
                    )
                } else {
                    (*id, false)
                }
            })
            .collect();

        if let (TrackMode::Tmf, Some(tmf)) = (self.cfg.mode, &model.tmf) {
            let mut updated = Vec::with_capacity(final_ids.len());
            for (k, (entry, _)) in answered.iter().enumerate() {
                let ObjectContent::Token(token) = entry.content else {
                    return Err(Error::ModelMismatch(
                        "memory fusion needs continuous object tokens".into(),
                    ));
                };
                let id = final_ids[k].0;
                let h = tape.slice_rows(hidden[k].0, hidden[k].1, 1);
                let embed = tape.stack_rows(&[token]);
                let prev = match (final_ids[k].1, self.memory.get(&id)) {
                    (false, Some((m, _))) => Some(
                        tape.input(Array2::from_shape_vec((1, m.len()), m.clone()).expect("row")),
                    ),
                    _ => None,
                };
                let m = tmf.update(&mut tape, h, prev, embed)?;
                updated.push((id, (tape.value(m).row(0).to_vec(), entry.key)));
            }
            self.memory.extend(updated);
        }

        let tracks = self.context.tracks();
        let results: Vec<TrackedObject> = answered
            .iter()
            .zip(&final_ids)
            .zip(&probs)
            .map(|(((entry, _), &(track_id, is_new)), &p)| TrackedObject {
                output_id: tracks[&track_id].output_id,
                track_id,
                bbox: objs.boxes[entry.index],
                confidence: objs.confidences[entry.index],
                id_confidence: p,
                is_new,
                detection: objs.sources[entry.index],
            })
            .collect();

        self.past.push_back(PastFrame {
            step,
            frame: frame.frame_index,
            image: if model.cfg.history_images {
                objs.image.iter().map(|r| row_of(&tape, r)).collect()
            } else {
                Vec::new()
            },
            pairs: answered
                .iter()
                .zip(&results)
                .map(|((e, _), r)| {
                    let entry = ObjectEntry {
                        content: e.content.map(|c| row_of(&tape, c)),
                        key: e.key,
                        index: e.index,
                    };
                    (entry, r.track_id, r.output_id)
                })
                .collect(),
        });
        while self.past.len() > self.cfg.window {
            self.past.pop_front();
        }
        self.step += 1;
        Ok(results)
    }
}

/// Tracks a whole video and returns MOTChallenge records.
pub fn track_video<T: Scalar>(
    model: &ArMot<T>,
    video: &Video,
    cfg: &InferConfig,
) -> Result<TrackingResult> {
    let mut tracker = Tracker::new(model, cfg.clone())?;
    let mut records = Vec::new();
    for frame in &video.frames {
        for o in tracker.track_frame(frame)? {
            records.push(MotRecord::from_normalized(
                frame.frame_index,
                o.output_id,
                &o.bbox,
                o.confidence,
                frame.image.width,
                frame.image.height,
            ));
        }
    }
    Ok(TrackingResult::new(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::simdata::{generate_suite, OracleConfig, SuiteConfig};
    use proptest::prelude::*;

    fn ctx(tau: usize) -> TemporalContext<f32> {
        TemporalContext::new(IdVocabulary::new(8), tau)
    }

    fn tok() -> ObjectRepr<f32> {
        ObjectRepr::Token(vec![0.0])
    }

    #[test]
    fn one_frame_occlusion_with_tau_one_gets_fresh_id() {
        let mut c = ctx(1);
        c.begin_frame(0);
        assert_eq!(c.commit(0, vec![], vec![tok()]).unwrap(), vec![(0, 0)]);
        // Frame 1: occluded.
        assert!(c.begin_frame(1).is_empty());
        c.commit(1, vec![], vec![]).unwrap();
        assert_eq!(c.tracks()[&0].n_lost, 1);
        // Frame 2: the track was pruned before the object reappears.
        let pruned = c.begin_frame(2);
        assert_eq!(pruned.len(), 1);
        assert!(c.ids().is_empty());
        assert_eq!(c.commit(2, vec![], vec![tok()]).unwrap(), vec![(0, 1)]);
    }

    #[test]
    fn track_stays_referenced_until_tau_frames_have_passed() {
        let tau = 3;
        let mut c = ctx(tau);
        c.begin_frame(0);
        c.commit(0, vec![], vec![tok()]).unwrap();
        for step in 1..=tau {
            assert!(c.begin_frame(step).is_empty(), "pruned at step {step}");
            assert!(c.ids().contains(&0));
            assert_eq!(c.tracks()[&0].n_lost, step);
        }
        c.commit(tau, vec![(0, tok())], vec![]).unwrap();
        assert_eq!(c.tracks()[&0].n_lost, 0);
        assert_eq!(c.tracks()[&0].output_id, 0);
        assert!(c.begin_frame(2 * tau + 1).len() == 1);
    }

    #[test]
    fn fresh_ids_avoid_live_tracks() {
        let mut c = ctx(5);
        c.begin_frame(0);
        c.commit(0, vec![], vec![tok(), tok(), tok()]).unwrap();
        c.begin_frame(1);
        let fresh = c.commit(1, vec![(1, tok())], vec![tok()]).unwrap();
        assert_eq!(fresh, vec![(3, 3)]);
    }

    proptest! {
        #[test]
        fn pruning_is_exact(tau in 1usize..6, seen in proptest::collection::vec(proptest::bool::ANY, 1..30)) {
            let mut c = ctx(tau);
            for (step, present) in seen.iter().enumerate() {
                c.begin_frame(step);
                let ids: Vec<usize> = c.ids().into_iter().collect();
                if *present {
                    if let Some(&id) = ids.first() {
                        c.commit(step, vec![(id, tok())], vec![]).unwrap();
                    } else {
                        c.commit(step, vec![], vec![tok()]).unwrap();
                    }
                } else {
                    c.commit(step, vec![], vec![]).unwrap();
                }
                for t in c.tracks().values() {
                    prop_assert!(t.n_lost <= tau);
                }
            }
        }
    }

    fn tiny(tmf: bool) -> ArMot<f64> {
        ArMot::new(ModelConfig {
            d_img: 8,
            d_lm: 8,
            d_det: 46,
            layers: 1,
            heads: 2,
            ff: 16,
            capacity: 32,
            tmf,
            seed: 4,
            ..Default::default()
        })
        .unwrap()
    }

    fn videos(n: usize, seed: u64) -> Vec<Video> {
        generate_suite(&SuiteConfig {
            oracle: OracleConfig {
                d_det: 46,
                ..Default::default()
            },
            ..SuiteConfig::training(n, seed)
        })
        .unwrap()
    }

    #[test]
    fn first_frame_objects_get_ids_zero_and_one() {
        let model = tiny(false);
        let mut v = videos(1, 1).remove(0);
        let f = &mut v.frames[0];
        f.gt_ids = None;
        f.detections.truncate(2);
        while f.detections.len() < 2 {
            let mut d = f.detections[0].clone();
            d.bbox = BBox::new(0.6, 0.6, 0.8, 0.8).unwrap();
            f.detections.push(d);
        }
        for d in &mut f.detections {
            d.confidence = 0.9;
        }
        let mut tr = Tracker::new(&model, InferConfig::default()).unwrap();
        let out = tr.track_frame(&v.frames[0]).unwrap();
        let mut ids: Vec<usize> = out.iter().map(|o| o.track_id).collect();
        ids.sort();
        assert_eq!(ids, vec![0, 1]);
        assert!(out.iter().all(|o| o.is_new && o.id_confidence == 1.0));
    }

    #[test]
    fn ids_are_unique_per_frame_and_results_deterministic() {
        for mode in [TrackMode::Window, TrackMode::Tmf] {
            let model = tiny(mode == TrackMode::Tmf);
            let cfg = InferConfig {
                mode,
                tau_loss: 2,
                tau_det: 0.0,
                ..Default::default()
            };
            for v in videos(2, 9) {
                let a = track_video(&model, &v, &cfg).unwrap();
                let b = track_video(&model, &v, &cfg).unwrap();
                assert_eq!(a, b);
                for (_, recs) in a.by_frame() {
                    let ids: BTreeSet<i64> = recs.iter().map(|r| r.id).collect();
                    assert_eq!(ids.len(), recs.len());
                }
            }
        }
    }

    #[test]
    fn empty_video_gives_empty_result() {
        let model = tiny(false);
        let v = Video {
            name: "empty".into(),
            frames: vec![],
        };
        assert!(track_video(&model, &v, &InferConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn tmf_mode_needs_memory_model() {
        let model = tiny(false);
        let cfg = InferConfig {
            mode: TrackMode::Tmf,
            ..Default::default()
        };
        assert!(matches!(
            Tracker::new(&model, cfg),
            Err(Error::ModelMismatch(_))
        ));
    }

    /// Window mode with T = 1 and memory mode give prefixes of the same shape
    /// for a two-object second frame, but different slot sources.
    #[test]
    fn window_one_and_memory_prefixes_differ_only_in_content() {
        let mut v = videos(1, 3).remove(0);
        for f in v.frames.iter_mut().take(2) {
            f.gt_ids = None;
            f.detections.truncate(2);
            for d in &mut f.detections {
                d.confidence = 1.0;
            }
        }
        assert_eq!(v.frames[0].detections.len(), 2);
        assert_eq!(v.frames[1].detections.len(), 2);
        let model = tiny(true);
        let dump = |mode| {
            let cfg = InferConfig {
                mode,
                window: 1,
                lost_entries: false,
                ..Default::default()
            };
            let mut tr = Tracker::new(&model, cfg).unwrap();
            tr.record_dumps();
            tr.track_frame(&v.frames[0]).unwrap();
            tr.track_frame(&v.frames[1]).unwrap();
            tr.dumps()[2].clone()
        };
        let window = dump(TrackMode::Window);
        let memory = dump(TrackMode::Tmf);
        let sources = |d: &str| -> Vec<String> {
            d.lines()
                .map(|l| {
                    l.split('\t')
                        .nth(2)
                        .unwrap_or("")
                        .split(':')
                        .next()
                        .unwrap_or("")
                        .to_string()
                })
                .collect()
        };
        let (ws, ms) = (sources(&window), sources(&memory));
        assert_eq!(ws.len(), ms.len());
        assert_eq!(&ws[..4], ["obj", "id", "obj", "id"]);
        assert_eq!(&ms[..4], ["mem", "mem", "mem", "mem"]);
        assert_eq!(ws[4..], ms[4..]);
        assert!(window.lines().nth(1).unwrap().contains("id:f0\tidx="));
        assert_ne!(window, memory);
    }
}
