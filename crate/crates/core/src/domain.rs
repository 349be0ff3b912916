//! Domain types shared across the pipeline and the free-ID policy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Widths of the image encoder, decoder, and detector query spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_img: usize,
    pub d_lm: usize,
    pub d_det: usize,
    pub patch: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            d_img: 64,
            d_lm: 128,
            d_det: 64,
            patch: 8,
        }
    }
}

impl ModelDims {
    pub fn validate(&self, heads: usize) -> Result<()> {
        if self.d_img == 0 || self.d_lm == 0 || self.d_det == 0 || self.patch == 0 {
            return Err(Error::InvalidConfig(format!(
                "model dims must be positive: {self:?}"
            )));
        }
        if heads == 0 || !self.d_lm.is_multiple_of(heads) {
            return Err(Error::InvalidConfig(format!(
                "d_lm={} not divisible by {heads} heads",
                self.d_lm
            )));
        }
        Ok(())
    }
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::Shape(format!(
                "invalid box [{x1}, {y1}, {x2}, {y2}]"
            )))
        }
    }

    pub fn is_valid(&self) -> bool {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        in_unit(self.x1)
            && in_unit(self.y1)
            && in_unit(self.x2)
            && in_unit(self.y2)
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    /// Clamps into the unit square; `None` when the result has no area.
    pub fn clamped(x1: f64, y1: f64, x2: f64, y2: f64) -> Option<Self> {
        let c = |v: f64| v.clamp(0.0, 1.0);
        let b = Self {
            x1: c(x1),
            y1: c(y1),
            x2: c(x2),
            y2: c(y2),
        };
        b.is_valid().then_some(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Option<Self> {
        Self::clamped(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Row-major H×W×C image with values in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, c: usize) -> &mut f32 {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    /// Nearest-neighbour resize, used to make dimensions patch-divisible.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        let mut out = Self::filled(height, width, self.channels, 0.0);
        for y in 0..height {
            let sy = (y * self.height) / height;
            for x in 0..width {
                let sx = (x * self.width) / width;
                for c in 0..self.channels {
                    *out.at_mut(y, x, c) = self.at(sy, sx, c);
                }
            }
        }
        out
    }

    /// Resizes up to the next multiple of `patch` in each dimension if needed.
    pub fn patch_aligned(self, patch: usize) -> Self {
        let up = |v: usize| v.div_ceil(patch) * patch;
        let (h, w) = (up(self.height), up(self.width));
        if (h, w) == (self.height, self.width) {
            self
        } else {
            self.resized(h, w)
        }
    }
}

/// One detector output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    pub query_embedding: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance: Option<[f32; 3]>,
}

/// Ground-truth object state in one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: u32,
    pub bbox: BBox,
    pub visible: bool,
}

/// One video frame with its detections and (optionally) ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub frame_index: usize,
    pub image: Image,
    pub detections: Vec<Detection>,
    /// Identity of each detection; `None` marks a false positive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_ids: Option<Vec<Option<u32>>>,
    #[serde(default)]
    pub ground_truth: Vec<GtObject>,
}

impl FrameObservation {
    pub fn validate(&self, patch: usize, d_det: usize) -> Result<()> {
        if !self.image.height.is_multiple_of(patch) || !self.image.width.is_multiple_of(patch) {
            return Err(Error::Shape(format!(
                "frame {}: image {}x{} not divisible by patch {patch}",
                self.frame_index, self.image.height, self.image.width
            )));
        }
        if let Some(ids) = &self.gt_ids {
            if ids.len() != self.detections.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.detections.len(),
                    got: ids.len(),
                });
            }
        }
        for d in &self.detections {
            if d.query_embedding.len() != d_det {
                return Err(Error::DimensionMismatch {
                    expected: d_det,
                    got: d.query_embedding.len(),
                });
            }
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(Error::Shape(format!(
                    "confidence {} outside [0,1]",
                    d.confidence
                )));
            }
        }
        Ok(())
    }
}

/// Layout of the discrete vocabulary: K identity slots, the `<new>` token,
/// then optional box-coordinate bin tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdVocabulary {
    pub capacity: usize,
    pub n_bins: usize,
}

pub const DEFAULT_ID_CAPACITY: usize = 64;

impl IdVocabulary {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            n_bins: 0,
        }
    }

    pub fn with_bins(capacity: usize, n_bins: usize) -> Self {
        Self { capacity, n_bins }
    }

    /// Index of `<new>`; always equal to the capacity.
    pub fn new_token(&self) -> usize {
        self.capacity
    }

    pub fn is_new(&self, index: usize) -> bool {
        index == self.capacity
    }

    /// Number of predictable entries (identities plus `<new>`).
    pub fn id_space(&self) -> usize {
        self.capacity + 1
    }

    pub fn bin_offset(&self) -> usize {
        self.capacity + 1
    }

    /// Rows of the embedding table.
    pub fn table_rows(&self) -> usize {
        self.capacity + 1 + self.n_bins
    }
}

impl Default for IdVocabulary {
    fn default() -> Self {
        Self::new(DEFAULT_ID_CAPACITY)
    }
}

/// Smallest identity in `[0, K)` not already active.
pub fn assign_free_id(active: &BTreeSet<usize>, vocab: &IdVocabulary) -> Result<usize> {
    (0..vocab.capacity)
        .find(|id| !active.contains(id))
        .ok_or(Error::CapacityExhausted {
            capacity: vocab.capacity,
        })
}

/// Object content carried in history: a continuous token or four bin indices.
#[derive(Clone, Debug, PartialEq)]
pub enum ObjectRepr<T> {
    Token(Vec<T>),
    Bins([usize; 4]),
}

/// Per-track state kept between frames.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackContext<T> {
    /// Vocabulary index in `[0, K)`.
    pub track_id: usize,
    /// Identity reported in results; never reused within a video.
    pub output_id: u64,
    pub latest: ObjectRepr<T>,
    /// Consecutive frames missed since `last_seen`.
    pub n_lost: usize,
    pub last_seen: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn free_id_examples() {
        let v = IdVocabulary::new(4);
        assert_eq!(assign_free_id(&BTreeSet::new(), &v).unwrap(), 0);
        assert_eq!(assign_free_id(&[0, 1, 3].into(), &v).unwrap(), 2);
        let full: BTreeSet<usize> = (0..4).collect();
        assert!(matches!(
            assign_free_id(&full, &v),
            Err(Error::CapacityExhausted { capacity: 4 })
        ));
    }

    #[test]
    fn new_token_is_outside_id_range() {
        let v = IdVocabulary::with_bins(64, 200);
        assert_eq!(v.new_token(), 64);
        assert_eq!(v.bin_offset(), 65);
        assert_eq!(v.table_rows(), 265);
    }

    #[test]
    fn iou_basic() {
        let a = BBox::new(0.0, 0.0, 0.5, 0.5).unwrap();
        let b = BBox::new(0.25, 0.0, 0.75, 0.5).unwrap();
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
        assert!(BBox::new(0.5, 0.0, 0.5, 1.0).is_err());
        assert!(BBox::clamped(-0.5, 0.2, 0.0, 0.4).is_none());
    }

    #[test]
    fn dims_validation() {
        assert!(ModelDims::default().validate(4).is_ok());
        assert!(ModelDims::default().validate(3).is_err());
    }

    proptest! {
        #[test]
        fn free_id_never_in_active_set(mask in proptest::collection::vec(any::<bool>(), 16)) {
            let v = IdVocabulary::new(16);
            let active: BTreeSet<usize> = mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
            match assign_free_id(&active, &v) {
                Ok(id) => {
                    prop_assert!(!active.contains(&id));
                    prop_assert!(id < 16);
                    prop_assert!((0..id).all(|i| active.contains(&i)));
                    prop_assert_eq!(assign_free_id(&active, &v).unwrap(), id);
                }
                Err(_) => prop_assert_eq!(active.len(), 16),
            }
        }
    }
}
