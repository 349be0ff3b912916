//! Region-aware alignment: fuse each object token with the mean of the image
//! tokens its box covers.

use ndarray::Array2;
use rand::Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::domain::BBox;
use crate::nn::{Init, Linear};
use crate::scalar::Scalar;
use crate::tokenize::ImageTokens;

/// Patch indices (row-major) whose cells overlap `bbox` with positive area.
/// A box too small to overlap any cell maps to the cell holding its center.
pub fn covered_patches(bbox: &BBox, grid_h: usize, grid_w: usize) -> Vec<usize> {
    let (gw, gh) = (grid_w as f64, grid_h as f64);
    let mut out = Vec::new();
    for r in 0..grid_h {
        let (top, bottom) = (r as f64 / gh, (r + 1) as f64 / gh);
        let ih = bbox.y2.min(bottom) - bbox.y1.max(top);
        if ih <= 0.0 {
            continue;
        }
        for c in 0..grid_w {
            let (left, right) = (c as f64 / gw, (c + 1) as f64 / gw);
            let iw = bbox.x2.min(right) - bbox.x1.max(left);
            if iw > 0.0 {
                out.push(r * grid_w + c);
            }
        }
    }
    if out.is_empty() {
        let (cx, cy) = bbox.center();
        let c = ((cx * gw) as usize).min(grid_w - 1);
        let r = ((cy * gh) as usize).min(grid_h - 1);
        out.push(r * grid_w + c);
    }
    out
}

/// Aligned object tokens for one frame plus the patch sets they drew from.
#[derive(Clone, Debug)]
pub struct AlignedObjects {
    /// N×d_lm.
    pub tokens: Var,
    pub covers: Vec<Vec<usize>>,
}

/// Linear fusion of `[object ; region mean]` (2·d_lm → d_lm).
#[derive(Clone, Debug)]
pub struct RegionAlign {
    pub fuse: Linear,
    pub dim: usize,
}

impl RegionAlign {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, dim: usize, rng: &mut impl Rng) -> Self {
        let fuse = Linear::new(store, "raa.fuse", 2 * dim, dim, Init::Xavier, true, rng);
        Self { fuse, dim }
    }

    /// Sets the fusion to pass the object token through and ignore the region.
    pub fn set_identity<T: Scalar>(&self, store: &mut ParamStore<T>) {
        let w = store.get_mut(self.fuse.weight);
        w.fill(T::zero());
        for i in 0..self.dim {
            w[[i, i]] = T::one();
        }
        if let Some(b) = self.fuse.bias {
            store.get_mut(b).fill(T::zero());
        }
    }

    /// Mean of the image tokens in `cover`, as a 1×d row.
    pub fn region_mean<T: Scalar>(
        tape: &mut Tape<'_, T>,
        image: &ImageTokens,
        cover: &[usize],
    ) -> Var {
        let rows = tape.gather_rows(image.tokens, cover);
        tape.mean_rows(rows)
    }

    /// Aligns `objects` (N×d, one row per box) against the frame's image tokens.
    pub fn align<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        objects: Var,
        boxes: &[BBox],
        image: &ImageTokens,
    ) -> AlignedObjects {
        assert_eq!(
            tape.shape(objects).0,
            boxes.len(),
            "one box per object token"
        );
        if boxes.is_empty() {
            let tokens = tape.input(Array2::zeros((0, self.dim)));
            return AlignedObjects {
                tokens,
                covers: Vec::new(),
            };
        }
        let covers: Vec<Vec<usize>> = boxes
            .iter()
            .map(|b| covered_patches(b, image.grid_h, image.grid_w))
            .collect();
        let regions: Vec<Var> = covers
            .iter()
            .map(|c| Self::region_mean(tape, image, c))
            .collect();
        let region = tape.concat_rows(&regions);
        let joined = tape.concat_cols(&[objects, region]);
        let tokens = self.fuse.forward(tape, joined);
        AlignedObjects { tokens, covers }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn cover_examples() {
        assert_eq!(covered_patches(&b(0.25, 0.25, 0.5, 0.5), 4, 4), vec![5]);
        assert_eq!(
            covered_patches(&b(0.0, 0.0, 0.5, 0.5), 4, 4),
            vec![0, 1, 4, 5]
        );
        assert_eq!(covered_patches(&b(0.26, 0.26, 0.49, 0.49), 4, 4), vec![5]);
        assert_eq!(covered_patches(&b(0.1, 0.6, 0.9, 0.7), 4, 4).len(), 4);
    }

    /// Independent oracle: brute-force intersection of the box with each cell rectangle.
    #[test]
    fn cover_matches_cell_intersection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let (x1, x2) = {
                let a: f64 = rng.random_range(0.0..1.0);
                let c: f64 = rng.random_range(0.0..1.0);
                (a.min(c), a.max(c))
            };
            let (y1, y2) = {
                let a: f64 = rng.random_range(0.0..1.0);
                let c: f64 = rng.random_range(0.0..1.0);
                (a.min(c), a.max(c))
            };
            let Ok(bb) = BBox::new(x1, y1, x2, y2) else {
                continue;
            };
            let (gh, gw) = (rng.random_range(1..7), rng.random_range(1..7));
            let mut expected = Vec::new();
            for idx in 0..gh * gw {
                let (r, c) = (idx / gw, idx % gw);
                let cell = [
                    c as f64 / gw as f64,
                    r as f64 / gh as f64,
                    (c + 1) as f64 / gw as f64,
                    (r + 1) as f64 / gh as f64,
                ];
                let area = (x2.min(cell[2]) - x1.max(cell[0])).max(0.0)
                    * (y2.min(cell[3]) - y1.max(cell[1])).max(0.0);
                if area > 0.0 {
                    expected.push(idx);
                }
            }
            assert_eq!(covered_patches(&bb, gh, gw), expected);
        }
    }

    #[test]
    fn identity_fusion_returns_object_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let raa = RegionAlign::new(&mut store, 3, &mut rng);
        raa.set_identity(&mut store);
        let mut tape = Tape::new(&store);
        let img = tape.input(Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64));
        let image = ImageTokens {
            tokens: img,
            grid_h: 2,
            grid_w: 2,
        };
        let obj = tape.input(ndarray::array![[0.5, -1.0, 2.0]]);
        let out = raa.align(&mut tape, obj, &[b(0.0, 0.0, 1.0, 1.0)], &image);
        assert_eq!(tape.value(out.tokens), tape.value(obj));
        assert_eq!(out.covers, vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn fusion_matches_finite_differences() {
        use crate::gradcheck::{check_params, probe_loss};
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let raa = RegionAlign::new(&mut store, 4, &mut rng);
        // Image and object tokens are parameters here so their gradients are checked too.
        let img = store.add(
            "img",
            Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0)),
        );
        let obj = store.add(
            "obj",
            Array2::from_shape_fn((2, 4), |_| rng.random_range(-1.0..1.0)),
        );
        let boxes = [b(0.0, 0.0, 0.6, 0.5), b(0.4, 0.3, 1.0, 0.9)];
        let report = check_params(&mut store, "", 1e-6, |t| {
            let image = ImageTokens {
                tokens: t.param(img),
                grid_h: 2,
                grid_w: 3,
            };
            let o = t.param(obj);
            let out = raa.align(t, o, &boxes, &image);
            probe_loss(t, out.tokens, 4)
        });
        assert_eq!(report.checked, store.num_scalars());
        assert!(report.max_rel_err <= 1e-3, "{report:?}");
    }
}
