//! Construction of the decoder's heterogeneous token prefix.
//!
//! A frame block is `[image tokens] ⊕ [object₁, ID₁, object₂, ID₂, …]`. A
//! training sequence for frame i concatenates history (previous frame blocks
//! plus lost-track entries, or per-track memory tokens), the current image
//! tokens, and the current frame's (object, ID) pairs with the ID slots marked
//! as prediction targets. Sequences are generic over the continuous-token
//! handle `C`, so the same builders serve tape-backed training and plain
//! inference.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{assign_free_id, IdVocabulary};
use crate::error::{Error, Result};

/// Where a slot came from; used by the debug dump and by TMF bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotSource {
    Image {
        frame: usize,
        patch: usize,
    },
    Object {
        frame: usize,
        index: usize,
    },
    Bin {
        frame: usize,
        index: usize,
        coord: u8,
    },
    Id {
        frame: usize,
    },
    Memory {
        track: usize,
    },
    Lost {
        track: usize,
    },
}

impl std::fmt::Display for SlotSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            SlotSource::Image { frame, patch } => write!(f, "img:f{frame}:p{patch}"),
            SlotSource::Object { frame, index } => write!(f, "obj:f{frame}:j{index}"),
            SlotSource::Bin {
                frame,
                index,
                coord,
            } => write!(f, "bin:f{frame}:j{index}:{coord}"),
            SlotSource::Id { frame } => write!(f, "id:f{frame}"),
            SlotSource::Memory { track } => write!(f, "mem:t{track}"),
            SlotSource::Lost { track } => write!(f, "lost:t{track}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Slot<C> {
    Continuous { token: C, source: SlotSource },
    Discrete { index: usize, source: SlotSource },
}

impl<C> Slot<C> {
    pub fn source(&self) -> SlotSource {
        match self {
            Slot::Continuous { source, .. } | Slot::Discrete { source, .. } => *source,
        }
    }

    pub fn map<D>(&self, f: impl FnOnce(&C) -> D) -> Slot<D> {
        match self {
            Slot::Continuous { token, source } => Slot::Continuous {
                token: f(token),
                source: *source,
            },
            Slot::Discrete { index, source } => Slot::Discrete {
                index: *index,
                source: *source,
            },
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, Slot::Continuous { .. })
    }
}

/// Decoder input: slots, the positions whose ID must be predicted, and
/// (for training) the target vocabulary index at each such position.
///
/// A prediction at position `p` is read from the decoder output at `p − 1`;
/// in training, slot `p` holds the teacher-forced target.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence<C> {
    pub slots: Vec<Slot<C>>,
    pub predict_positions: Vec<usize>,
    pub target_ids: Vec<usize>,
}

impl<C> TokenSequence<C> {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Concrete identities named by ID slots (frame, lost-track, or memory) before `end`.
    pub fn referenced_ids(&self, end: usize, vocab: &IdVocabulary) -> BTreeSet<usize> {
        self.slots[..end.min(self.slots.len())]
            .iter()
            .filter_map(|s| match s {
                Slot::Discrete {
                    index,
                    source:
                        SlotSource::Id { .. } | SlotSource::Lost { .. } | SlotSource::Memory { .. },
                } if *index < vocab.capacity => Some(*index),
                _ => None,
            })
            .collect()
    }

    /// One line per slot: `position kind source value`, `*` marking prediction
    /// targets; a trailing `predict <len>` line when the prediction is open-ended.
    pub fn dump(&self, norm: impl Fn(&C) -> f64) -> String {
        let mut out = String::new();
        for (i, slot) in self.slots.iter().enumerate() {
            let mark = if self.predict_positions.contains(&i) {
                "\t*"
            } else {
                ""
            };
            match slot {
                Slot::Continuous { token, source } => {
                    writeln!(out, "{i}\tC\t{source}\tnorm={:.6}{mark}", norm(token)).unwrap();
                }
                Slot::Discrete { index, source } => {
                    writeln!(out, "{i}\tD\t{source}\tidx={index}{mark}").unwrap();
                }
            }
        }
        if self.predict_positions.contains(&self.slots.len()) {
            writeln!(out, "predict\t{}", self.slots.len()).unwrap();
        }
        out
    }
}

/// An object's content: one continuous token, or four bin tokens (box mode).
#[derive(Clone, Debug, PartialEq)]
pub enum ObjectContent<C> {
    Token(C),
    Bins([usize; 4]),
}

impl<C> ObjectContent<C> {
    pub fn map<D>(&self, mut f: impl FnMut(&C) -> D) -> ObjectContent<D> {
        match self {
            ObjectContent::Token(c) => ObjectContent::Token(f(c)),
            ObjectContent::Bins(b) => ObjectContent::Bins(*b),
        }
    }
}

impl<C: Clone> ObjectContent<C> {
    fn push_slots(&self, frame: usize, index: usize, out: &mut Vec<Slot<C>>) {
        match self {
            ObjectContent::Token(c) => out.push(Slot::Continuous {
                token: c.clone(),
                source: SlotSource::Object { frame, index },
            }),
            ObjectContent::Bins(bins) => {
                for (coord, &b) in bins.iter().enumerate() {
                    out.push(Slot::Discrete {
                        index: b,
                        source: SlotSource::Bin {
                            frame,
                            index,
                            coord: coord as u8,
                        },
                    });
                }
            }
        }
    }
}

/// Sort key of the canonical within-frame order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonKey {
    pub confidence: f64,
    pub x1: f64,
    pub y1: f64,
}

/// Confidence descending, then x1 ascending, then y1 ascending.
pub fn canonical_cmp(a: &CanonKey, b: &CanonKey) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.x1.total_cmp(&b.x1))
        .then(a.y1.total_cmp(&b.y1))
}

/// Indices of `keys` in canonical order (stable for exact ties).
pub fn canonical_order(keys: &[CanonKey]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| canonical_cmp(&keys[a], &keys[b]));
    idx
}

/// One object of a frame: its content, sort key, and index in the detection list.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectEntry<C> {
    pub content: ObjectContent<C>,
    pub key: CanonKey,
    pub index: usize,
}

/// `[image tokens] ⊕ [E¹, ID¹, E², ID², …]` with objects put in canonical order.
pub fn build_frame_block<C: Clone>(
    frame: usize,
    image: Option<&[C]>,
    pairs: &[(ObjectEntry<C>, usize)],
) -> Vec<Slot<C>> {
    let mut out = Vec::new();
    if let Some(tokens) = image {
        out.extend(
            tokens
                .iter()
                .enumerate()
                .map(|(patch, t)| Slot::Continuous {
                    token: t.clone(),
                    source: SlotSource::Image { frame, patch },
                }),
        );
    }
    let keys: Vec<CanonKey> = pairs.iter().map(|(e, _)| e.key).collect();
    for k in canonical_order(&keys) {
        let (entry, id) = &pairs[k];
        entry.content.push_slots(frame, entry.index, &mut out);
        out.push(Slot::Discrete {
            index: *id,
            source: SlotSource::Id { frame },
        });
    }
    out
}

/// A track recalled from the context manager: its latest content and ID.
#[derive(Clone, Debug, PartialEq)]
pub struct LostEntry<C> {
    pub track: usize,
    pub content: ObjectContent<C>,
    pub id: usize,
}

/// Reference history preceding the current frame.
#[derive(Clone, Debug, PartialEq)]
pub enum History<C> {
    /// Previous frame blocks (oldest first) followed by lost-track entries (oldest first).
    Window {
        blocks: Vec<Vec<Slot<C>>>,
        lost: Vec<LostEntry<C>>,
    },
    /// One memory token per track followed by its ID.
    Memory(Vec<(C, usize)>),
}

impl<C> History<C> {
    pub fn map<D>(&self, mut f: impl FnMut(&C) -> D) -> History<D> {
        match self {
            History::Window { blocks, lost } => History::Window {
                blocks: blocks
                    .iter()
                    .map(|b| b.iter().map(|s| s.map(&mut f)).collect())
                    .collect(),
                lost: lost
                    .iter()
                    .map(|l| LostEntry {
                        track: l.track,
                        content: l.content.map(&mut f),
                        id: l.id,
                    })
                    .collect(),
            },
            History::Memory(tracks) => {
                History::Memory(tracks.iter().map(|(c, id)| (f(c), *id)).collect())
            }
        }
    }
}

/// Memory entries `(content, id, key of the latest detection)` in canonical
/// order, ties broken by ID, as the `History::Memory` payload.
pub fn memory_in_canonical_order<C>(
    entries: impl IntoIterator<Item = (C, usize, CanonKey)>,
) -> Vec<(C, usize)> {
    let mut v: Vec<(C, usize, CanonKey)> = entries.into_iter().collect();
    v.sort_by(|a, b| canonical_cmp(&a.2, &b.2).then(a.1.cmp(&b.1)));
    v.into_iter().map(|(c, id, _)| (c, id)).collect()
}

impl<C: Clone> History<C> {
    pub fn empty() -> Self {
        History::Window {
            blocks: Vec::new(),
            lost: Vec::new(),
        }
    }

    pub fn slots(&self) -> Vec<Slot<C>> {
        let mut out = Vec::new();
        match self {
            History::Window { blocks, lost } => {
                for b in blocks {
                    out.extend(b.iter().cloned());
                }
                for l in lost {
                    match &l.content {
                        ObjectContent::Token(c) => out.push(Slot::Continuous {
                            token: c.clone(),
                            source: SlotSource::Lost { track: l.track },
                        }),
                        ObjectContent::Bins(bins) => {
                            out.extend(bins.iter().map(|&b| Slot::Discrete {
                                index: b,
                                source: SlotSource::Lost { track: l.track },
                            }))
                        }
                    }
                    out.push(Slot::Discrete {
                        index: l.id,
                        source: SlotSource::Lost { track: l.track },
                    });
                }
            }
            History::Memory(tracks) => {
                for (c, id) in tracks {
                    out.push(Slot::Continuous {
                        token: c.clone(),
                        source: SlotSource::Memory { track: *id },
                    });
                    out.push(Slot::Discrete {
                        index: *id,
                        source: SlotSource::Memory { track: *id },
                    });
                }
            }
        }
        out
    }
}

/// Prefix for predicting the ID of `next`: history, current image tokens, the
/// pairs already answered in this frame, then `next`'s content.
pub fn build_inference_prefix<C: Clone>(
    frame: usize,
    history: &History<C>,
    current_image: Option<&[C]>,
    answered: &[(ObjectEntry<C>, usize)],
    next: &ObjectEntry<C>,
) -> TokenSequence<C> {
    let mut slots = history.slots();
    if let Some(tokens) = current_image {
        slots.extend(
            tokens
                .iter()
                .enumerate()
                .map(|(patch, t)| Slot::Continuous {
                    token: t.clone(),
                    source: SlotSource::Image { frame, patch },
                }),
        );
    }
    for (entry, id) in answered {
        entry.content.push_slots(frame, entry.index, &mut slots);
        slots.push(Slot::Discrete {
            index: *id,
            source: SlotSource::Id { frame },
        });
    }
    next.content.push_slots(frame, next.index, &mut slots);
    let end = slots.len();
    TokenSequence {
        slots,
        predict_positions: vec![end],
        target_ids: Vec::new(),
    }
}

/// Teacher-forced sequence for one frame: history, current image, and every
/// (object, target ID) pair in canonical order. `objects` must already be in
/// canonical order and aligned with `targets`.
pub fn build_supervised_frame<C: Clone>(
    frame: usize,
    history: &History<C>,
    current_image: Option<&[C]>,
    objects: &[ObjectEntry<C>],
    targets: &[usize],
) -> TokenSequence<C> {
    assert_eq!(objects.len(), targets.len());
    let mut slots = history.slots();
    if let Some(tokens) = current_image {
        slots.extend(
            tokens
                .iter()
                .enumerate()
                .map(|(patch, t)| Slot::Continuous {
                    token: t.clone(),
                    source: SlotSource::Image { frame, patch },
                }),
        );
    }
    let mut predict_positions = Vec::with_capacity(objects.len());
    for (entry, &target) in objects.iter().zip(targets) {
        entry.content.push_slots(frame, entry.index, &mut slots);
        predict_positions.push(slots.len());
        slots.push(Slot::Discrete {
            index: target,
            source: SlotSource::Id { frame },
        });
    }
    TokenSequence {
        slots,
        predict_positions,
        target_ids: targets.to_vec(),
    }
}

/// How concrete IDs are handed out to first appearances during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdPolicy {
    /// Smallest unused index (the inference policy).
    SmallestFree,
    /// Uniformly random unused index, seeded.
    Shuffled(u64),
}

/// Maps ground-truth identities to vocabulary IDs across a clip and produces
/// per-frame targets (`<new>` on first appearance).
pub struct IdentityLabeler {
    vocab: IdVocabulary,
    map: HashMap<u64, usize>,
    rng: Option<ChaCha8Rng>,
    next_anonymous: u64,
}

/// Identities for false positives are drawn from this range so they never collide.
const ANONYMOUS_BASE: u64 = 1 << 62;

impl IdentityLabeler {
    pub fn new(vocab: IdVocabulary, policy: IdPolicy) -> Self {
        Self {
            vocab,
            map: HashMap::new(),
            rng: match policy {
                IdPolicy::SmallestFree => None,
                IdPolicy::Shuffled(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            },
            next_anonymous: ANONYMOUS_BASE,
        }
    }

    /// Concrete ID currently bound to a ground-truth identity.
    pub fn concrete(&self, identity: u64) -> Option<usize> {
        self.map.get(&identity).copied()
    }

    fn allocate(&mut self) -> Result<usize> {
        let active: BTreeSet<usize> = self.map.values().copied().collect();
        match &mut self.rng {
            None => assign_free_id(&active, &self.vocab),
            Some(rng) => {
                let free: Vec<usize> = (0..self.vocab.capacity)
                    .filter(|i| !active.contains(i))
                    .collect();
                if free.is_empty() {
                    return Err(Error::CapacityExhausted {
                        capacity: self.vocab.capacity,
                    });
                }
                Ok(free[rng.random_range(0..free.len())])
            }
        }
    }

    /// Labels one frame's objects (canonical order). An identity is labeled with
    /// its concrete ID only when that ID is in `referenced`; otherwise `<new>`,
    /// and a fresh ID is bound after the frame. Returns `(targets, concrete ids)`.
    pub fn label_frame(
        &mut self,
        identities: &[Option<u64>],
        referenced: &BTreeSet<usize>,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut targets = Vec::with_capacity(identities.len());
        let mut fresh = Vec::new();
        let mut keys = Vec::with_capacity(identities.len());
        for (k, ident) in identities.iter().enumerate() {
            let key = match ident {
                Some(i) => *i,
                None => {
                    self.next_anonymous += 1;
                    self.next_anonymous
                }
            };
            keys.push(key);
            match self.map.get(&key) {
                Some(&id) if referenced.contains(&id) => targets.push(id),
                _ => {
                    targets.push(self.vocab.new_token());
                    fresh.push(k);
                }
            }
        }
        for &k in &fresh {
            self.map.remove(&keys[k]);
        }
        for &k in &fresh {
            let id = self.allocate()?;
            self.map.insert(keys[k], id);
        }
        let concrete = keys.iter().map(|k| self.map[k]).collect();
        Ok((targets, concrete))
    }
}

/// Layout of window-mode training sequences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceConfig {
    /// Number of previous frames kept as full blocks (≥ 1).
    pub window: usize,
    /// Include image tokens inside history blocks.
    pub history_images: bool,
    /// Include the current frame's image tokens.
    pub current_image: bool,
    /// Recall identities that fell out of the window as (latest content, ID) entries.
    pub lost_entries: bool,
    /// Also supervise the clip's first frame (all targets `<new>`).
    pub supervise_first: bool,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            window: 4,
            history_images: false,
            current_image: true,
            lost_entries: true,
            supervise_first: false,
        }
    }
}

/// One frame of a clip prepared for sequence construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipFrame<C> {
    pub frame: usize,
    pub image: Vec<C>,
    /// Canonical order.
    pub objects: Vec<ObjectEntry<C>>,
    /// Ground-truth identity per object; `None` for false positives.
    pub identities: Vec<Option<u64>>,
}

impl<C> ClipFrame<C> {
    /// Puts objects (and their identities) into canonical order.
    pub fn canonicalize(&mut self)
    where
        C: Clone,
    {
        let keys: Vec<CanonKey> = self.objects.iter().map(|o| o.key).collect();
        let order = canonical_order(&keys);
        self.objects = order.iter().map(|&i| self.objects[i].clone()).collect();
        self.identities = order.iter().map(|&i| self.identities[i]).collect();
    }
}

/// A supervised frame's sequence and the concrete IDs given to its objects.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedFrame<C> {
    /// Position of the frame inside the clip.
    pub clip_index: usize,
    pub sequence: TokenSequence<C>,
    pub concrete_ids: Vec<usize>,
}

/// Window-mode teacher-forced sequences, one per supervised frame.
pub fn build_training_sequences<C: Clone>(
    clip: &[ClipFrame<C>],
    cfg: &SequenceConfig,
    vocab: &IdVocabulary,
    policy: IdPolicy,
) -> Result<Vec<SupervisedFrame<C>>> {
    if clip.len() < 2 {
        return Err(Error::ClipTooShort {
            needed: 2,
            got: clip.len(),
        });
    }
    if cfg.window == 0 {
        return Err(Error::InvalidConfig("sequence window must be >= 1".into()));
    }
    let mut labeler = IdentityLabeler::new(*vocab, policy);
    let mut blocks: Vec<Vec<Slot<C>>> = Vec::with_capacity(clip.len());
    // identity -> (clip index last seen, latest content)
    let mut latest: HashMap<u64, (usize, ObjectContent<C>)> = HashMap::new();
    let mut out = Vec::new();

    for (i, frame) in clip.iter().enumerate() {
        let start = i.saturating_sub(cfg.window);
        let window_blocks: Vec<Vec<Slot<C>>> = blocks[start..i].to_vec();
        let mut lost = Vec::new();
        if cfg.lost_entries {
            let mut in_window = BTreeSet::new();
            for b in &window_blocks {
                for s in b {
                    if let Slot::Discrete {
                        index,
                        source: SlotSource::Id { .. },
                    } = s
                    {
                        in_window.insert(*index);
                    }
                }
            }
            let mut candidates: Vec<(usize, usize, ObjectContent<C>)> = latest
                .iter()
                .filter_map(|(ident, (seen, content))| {
                    let id = labeler.concrete(*ident)?;
                    (*seen < start && !in_window.contains(&id))
                        .then(|| (*seen, id, content.clone()))
                })
                .collect();
            candidates.sort_by_key(|(seen, id, _)| (*seen, *id));
            lost = candidates
                .into_iter()
                .map(|(_, id, content)| LostEntry {
                    track: id,
                    content,
                    id,
                })
                .collect();
        }
        let history = History::Window {
            blocks: window_blocks,
            lost,
        };
        let history_slots = history.slots();
        let referenced: BTreeSet<usize> = history_slots
            .iter()
            .filter_map(|s| match s {
                Slot::Discrete {
                    index,
                    source: SlotSource::Id { .. } | SlotSource::Lost { .. },
                } if *index < vocab.capacity => Some(*index),
                _ => None,
            })
            .collect();
        let (targets, concrete) = labeler.label_frame(&frame.identities, &referenced)?;

        let image = cfg.current_image.then_some(frame.image.as_slice());
        if i > 0 || cfg.supervise_first {
            let sequence =
                build_supervised_frame(frame.frame, &history, image, &frame.objects, &targets);
            out.push(SupervisedFrame {
                clip_index: i,
                sequence,
                concrete_ids: concrete.clone(),
            });
        }

        let pairs: Vec<(ObjectEntry<C>, usize)> = frame
            .objects
            .iter()
            .cloned()
            .zip(concrete.iter().copied())
            .collect();
        let hist_image = cfg.history_images.then_some(frame.image.as_slice());
        blocks.push(build_frame_block(frame.frame, hist_image, &pairs));
        for (entry, ident) in frame.objects.iter().zip(&frame.identities) {
            if let Some(ident) = ident {
                latest.insert(*ident, (i, entry.content.clone()));
            }
        }
    }
    Ok(out)
}
