//! Image and object tokenizers.
//!
//! Images are cut into P×P patches, encoded by a small learned patch encoder
//! (`d_img` channels), and projected to the decoder width by a two-layer
//! perceptron. Objects become either one continuous token (query mode) or four
//! coordinate-bin tokens (box mode).

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tape, Var};
use crate::domain::{BBox, Detection, Image, ModelDims};
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Mlp};
use crate::scalar::Scalar;

/// Image tokens recorded on a tape: `grid_h · grid_w` rows of width `d_lm`.
#[derive(Clone, Copy, Debug)]
pub struct ImageTokens {
    pub tokens: Var,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl ImageTokens {
    pub fn len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flattens an image into one row per patch, patches in row-major order.
pub fn patchify<T: Scalar>(image: &Image, patch: usize) -> Result<(Array2<T>, usize, usize)> {
    if patch == 0 || !image.height.is_multiple_of(patch) || !image.width.is_multiple_of(patch) {
        return Err(Error::Shape(format!(
            "image {}x{} not divisible by patch {patch}",
            image.height, image.width
        )));
    }
    let (gh, gw) = (image.height / patch, image.width / patch);
    let c = image.channels;
    let mut out = Array2::zeros((gh * gw, patch * patch * c));
    for gy in 0..gh {
        for gx in 0..gw {
            let mut row = out.row_mut(gy * gw + gx);
            let mut k = 0;
            for py in 0..patch {
                for px in 0..patch {
                    for ch in 0..c {
                        row[k] = T::lit(image.at(gy * patch + py, gx * patch + px, ch) as f64);
                        k += 1;
                    }
                }
            }
        }
    }
    Ok((out, gh, gw))
}

/// Patch encoder followed by the vision adapter.
#[derive(Clone, Debug)]
pub struct ImageTokenizer {
    pub patch_embed: Linear,
    pub adapter: Mlp,
    pub patch: usize,
    pub channels: usize,
}

impl ImageTokenizer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        dims: &ModelDims,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let d_patch = dims.patch * dims.patch * channels;
        Self {
            patch_embed: Linear::new(
                store,
                "image.patch_embed",
                d_patch,
                dims.d_img,
                Init::Xavier,
                true,
                rng,
            ),
            adapter: Mlp::new(
                store,
                "image.adapter",
                &[dims.d_img, dims.d_lm, dims.d_lm],
                rng,
            ),
            patch: dims.patch,
            channels,
        }
    }

    /// Patch-level encoder features (`d_img` wide), before the adapter.
    pub fn encode_patches<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        image: &Image,
    ) -> Result<(Var, usize, usize)> {
        if image.channels != self.channels {
            return Err(Error::DimensionMismatch {
                expected: self.channels,
                got: image.channels,
            });
        }
        let (patches, gh, gw) = patchify::<T>(image, self.patch)?;
        let x = tape.input(patches);
        let h = self.patch_embed.forward(tape, x);
        Ok((tape.gelu(h), gh, gw))
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, image: &Image) -> Result<ImageTokens> {
        let (features, grid_h, grid_w) = self.encode_patches(tape, image)?;
        let tokens = self.adapter.forward(tape, features);
        Ok(ImageTokens {
            tokens,
            grid_h,
            grid_w,
        })
    }
}

/// Maps detector query embeddings (`d_det`) into decoder space (`d_lm`).
#[derive(Clone, Debug)]
pub struct ObjectAdapter {
    pub mlp: Mlp,
    pub d_det: usize,
}

impl ObjectAdapter {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, dims: &ModelDims, rng: &mut impl Rng) -> Self {
        Self {
            mlp: Mlp::new(
                store,
                "object.adapter",
                &[dims.d_det, dims.d_lm, dims.d_lm],
                rng,
            ),
            d_det: dims.d_det,
        }
    }

    /// Stacks the query embeddings of `dets` as rows and projects them.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, dets: &[&Detection]) -> Result<Var> {
        let mut input = Array2::zeros((dets.len(), self.d_det));
        for (r, d) in dets.iter().enumerate() {
            if d.query_embedding.len() != self.d_det {
                return Err(Error::DimensionMismatch {
                    expected: self.d_det,
                    got: d.query_embedding.len(),
                });
            }
            for (c, &v) in d.query_embedding.iter().enumerate() {
                input[[r, c]] = T::lit(v as f64);
            }
        }
        let x = tape.input(input);
        Ok(self.forward_var(tape, x))
    }

    pub fn forward_var<T: Scalar>(&self, tape: &mut Tape<'_, T>, queries: Var) -> Var {
        self.mlp.forward(tape, queries)
    }
}

/// Quantizes box coordinates into vocabulary bin tokens.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDiscretizer {
    pub n_bins: usize,
    /// Resolution scale in (0, 1].
    pub alpha: f64,
    /// Vocabulary index of bin 0.
    pub offset: usize,
}

impl BoxDiscretizer {
    pub fn new(n_bins: usize, alpha: f64, offset: usize) -> Result<Self> {
        if n_bins == 0 || !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "box discretizer needs n_bins >= 1 and alpha in (0,1], got {n_bins}, {alpha}"
            )));
        }
        Ok(Self {
            n_bins,
            alpha,
            offset,
        })
    }

    pub fn effective_bins(&self) -> usize {
        ((self.alpha * self.n_bins as f64).round() as usize).max(1)
    }

    pub fn bin(&self, c: f64) -> usize {
        let eff = self.effective_bins();
        ((c * eff as f64).floor().max(0.0) as usize).min(eff - 1)
    }

    /// Token indices for `[x1, y1, x2, y2]`.
    pub fn discretize(&self, bbox: &BBox) -> [usize; 4] {
        bbox.as_array().map(|c| self.offset + self.bin(c))
    }
}

/// Mean RGB over the pixels whose centers fall inside `bbox`.
pub fn crop_mean_color(bbox: &BBox, image: &Image) -> [f32; 3] {
    let stats = crop_stats(bbox, image);
    [stats[0] as f32, stats[1] as f32, stats[2] as f32]
}

/// Mean and std of up to three channels inside the box (falls back to the center pixel).
fn crop_stats(bbox: &BBox, image: &Image) -> [f64; 6] {
    let (h, w) = (image.height as f64, image.width as f64);
    let ch = image.channels.min(3);
    let mut sum = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let mut n = 0usize;
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
            for c in 0..ch {
                let v = image.at(y, x, c) as f64;
                sum[c] += v;
                sq[c] += v * v;
            }
            n += 1;
        }
    }
    if n == 0 {
        let (cx, cy) = bbox.center();
        let y = ((cy * h) as usize).min(image.height - 1);
        let x = ((cx * w) as usize).min(image.width - 1);
        let mut out = [0.0; 6];
        for (c, slot) in out.iter_mut().enumerate().take(ch) {
            *slot = image.at(y, x, c) as f64;
        }
        return out;
    }
    let mut out = [0.0; 6];
    for c in 0..ch {
        let mean = sum[c] / n as f64;
        out[c] = mean;
        out[3 + c] = (sq[c] / n as f64 - mean * mean).max(0.0).sqrt();
    }
    out
}

/// Number of informative entries produced by [`query_features`] before padding.
pub const QUERY_FEATURE_LEN: usize = 46;

/// Fixed encoding of a box and its crop statistics, padded or truncated to `d_det`.
///
/// Layout: corners, center and size (8); sin/cos of the center at six
/// octaves (24); sin/cos of the size at two octaves (8); crop color mean and
/// std (6).
pub fn query_features(bbox: &BBox, image: &Image, d_det: usize) -> Vec<f32> {
    let (cx, cy) = bbox.center();
    let (w, h) = (bbox.width(), bbox.height());
    let mut f = Vec::with_capacity(QUERY_FEATURE_LEN.max(d_det));
    f.extend_from_slice(&[bbox.x1, bbox.y1, bbox.x2, bbox.y2, cx, cy, w, h]);
    for k in 0..6 {
        let freq = PI * f64::from(1u32 << k);
        f.extend_from_slice(&[
            (freq * cx).sin(),
            (freq * cx).cos(),
            (freq * cy).sin(),
            (freq * cy).cos(),
        ]);
    }
    for k in 0..2 {
        let freq = PI * f64::from(1u32 << k);
        f.extend_from_slice(&[
            (freq * w).sin(),
            (freq * w).cos(),
            (freq * h).sin(),
            (freq * h).cos(),
        ]);
    }
    f.extend_from_slice(&crop_stats(bbox, image));
    debug_assert_eq!(f.len(), QUERY_FEATURE_LEN);
    f.resize(d_det, 0.0);
    f.into_iter().map(|v| v as f32).collect()
}
