//! A small trainable dense detector on the patch grid.
//!
//! Each patch cell predicts objectness, a box (center offset inside the cell
//! plus width and height), and a query embedding that the object adapter
//! consumes. Ground-truth objects are assigned to the cell containing their
//! center.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tape, Var};
use crate::domain::{BBox, Detection, GtObject};
use crate::nn::{Init, Linear};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct ToyDetector {
    pub query: Linear,
    pub cls: Linear,
    pub boxes: Linear,
    pub d_det: usize,
}

/// Per-cell outputs for one frame.
#[derive(Clone, Copy, Debug)]
pub struct DetectorOutput {
    /// G×d_det.
    pub queries: Var,
    /// G×2 (background, object).
    pub logits: Var,
    /// G×4 boxes as (x1, y1, x2, y2), unclamped.
    pub boxes: Var,
    pub grid_h: usize,
    pub grid_w: usize,
}

/// Detection loss terms (each 1×1) and the cell assigned to every ground-truth object.
#[derive(Clone, Debug)]
pub struct DetectorLoss {
    pub cls: Var,
    pub l1: Option<Var>,
    pub giou: Option<Var>,
    /// `(cell, gt index)` pairs.
    pub assigned: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub ce: f64,
}

impl LossWeights {
    /// Detections are given; only the identity loss is active.
    pub fn oracle() -> Self {
        Self {
            cls: 0.0,
            l1: 0.0,
            giou: 0.0,
            ce: 1.0,
        }
    }

    pub fn toy_detector() -> Self {
        Self {
            cls: 2.0,
            l1: 5.0,
            giou: 2.0,
            ce: 1.0,
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::oracle()
    }
}

impl ToyDetector {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        d_img: usize,
        d_det: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            query: Linear::new(
                store,
                "detector.query",
                d_img,
                d_det,
                Init::Xavier,
                true,
                rng,
            ),
            cls: Linear::new(store, "detector.cls", d_det, 2, Init::Xavier, true, rng),
            boxes: Linear::new(store, "detector.box", d_det, 4, Init::Xavier, true, rng),
            d_det,
        }
    }

    /// `features` are the G×d_img patch features in row-major grid order.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        features: Var,
        grid_h: usize,
        grid_w: usize,
    ) -> DetectorOutput {
        let h = self.query.forward(tape, features);
        let queries = tape.gelu(h);
        let logits = self.cls.forward(tape, queries);
        let raw = self.boxes.forward(tape, queries);
        let s = tape.sigmoid(raw);
        let g = grid_h * grid_w;
        let scale = Array2::from_shape_fn((g, 4), |(_, c)| match c {
            0 => T::lit(1.0 / grid_w as f64),
            1 => T::lit(1.0 / grid_h as f64),
            _ => T::one(),
        });
        let offset = Array2::from_shape_fn((g, 4), |(cell, c)| match c {
            0 => T::lit((cell % grid_w) as f64 / grid_w as f64),
            1 => T::lit((cell / grid_w) as f64 / grid_h as f64),
            _ => T::zero(),
        });
        // (cx, cy, w, h) -> (x1, y1, x2, y2)
        let to_corners = ndarray::array![
            [1.0, 0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0, 1.0],
            [-0.5, 0.0, 0.5, 0.0],
            [0.0, -0.5, 0.0, 0.5]
        ]
        .mapv(T::lit);
        let scale = tape.input(scale);
        let offset = tape.input(offset);
        let m = tape.input(to_corners);
        let cxcywh = tape.mul(s, scale);
        let cxcywh = tape.add(cxcywh, offset);
        let boxes = tape.matmul(cxcywh, m);
        DetectorOutput {
            queries,
            logits,
            boxes,
            grid_h,
            grid_w,
        }
    }

    /// Cell index whose rectangle holds the box center; the first object claims a cell.
    pub fn assign(gt: &[GtObject], grid_h: usize, grid_w: usize) -> Vec<(usize, usize)> {
        let mut taken = vec![false; grid_h * grid_w];
        let mut out = Vec::new();
        for (k, g) in gt.iter().enumerate().filter(|(_, g)| g.visible) {
            let (cx, cy) = g.bbox.center();
            let c = ((cx * grid_w as f64) as usize).min(grid_w - 1);
            let r = ((cy * grid_h as f64) as usize).min(grid_h - 1);
            let cell = r * grid_w + c;
            if !taken[cell] {
                taken[cell] = true;
                out.push((cell, k));
            }
        }
        out
    }

    pub fn loss<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        out: &DetectorOutput,
        gt: &[GtObject],
    ) -> DetectorLoss {
        let assigned = Self::assign(gt, out.grid_h, out.grid_w);
        let g = out.grid_h * out.grid_w;
        let mut labels = vec![0usize; g];
        for &(cell, _) in &assigned {
            labels[cell] = 1;
        }
        let targets: Vec<(usize, usize)> = labels.into_iter().enumerate().collect();
        let cls = tape.cross_entropy(out.logits, &targets);
        if assigned.is_empty() {
            return DetectorLoss {
                cls,
                l1: None,
                giou: None,
                assigned,
            };
        }
        let cells: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        let pred = tape.gather_rows(out.boxes, &cells);
        let target = Array2::from_shape_fn((assigned.len(), 4), |(i, c)| {
            T::lit(gt[assigned[i].1].bbox.as_array()[c])
        });
        let target = tape.input(target);
        let diff = tape.sub(pred, target);
        let diff = tape.abs(diff);
        let l1 = tape.mean(diff);
        let giou = giou_loss(tape, pred, target);
        DetectorLoss {
            cls,
            l1: Some(l1),
            giou: Some(giou),
            assigned,
        }
    }

    /// Cells whose object probability is at least `threshold`, as detections.
    pub fn detections<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        out: &DetectorOutput,
        threshold: f64,
    ) -> Vec<(usize, Detection)> {
        let probs = tape.softmax(out.logits, false);
        let probs = tape.value(probs).to_owned();
        let boxes = tape.value(out.boxes).to_owned();
        let queries = tape.value(out.queries).to_owned();
        let mut dets = Vec::new();
        for cell in 0..probs.nrows() {
            let p = probs[[cell, 1]].as_f64();
            if p < threshold {
                continue;
            }
            let b = boxes.row(cell);
            let Some(bbox) =
                BBox::clamped(b[0].as_f64(), b[1].as_f64(), b[2].as_f64(), b[3].as_f64())
            else {
                continue;
            };
            dets.push((
                cell,
                Detection {
                    bbox,
                    confidence: p,
                    query_embedding: queries
                        .row(cell)
                        .iter()
                        .map(|v| v.as_f64() as f32)
                        .collect(),
                    appearance: None,
                },
            ));
        }
        dets
    }
}

/// Mean `1 − GIoU` over matching rows of two N×4 corner-format boxes.
pub fn giou_loss<T: Scalar>(tape: &mut Tape<'_, T>, pred: Var, target: Var) -> Var {
    let n = tape.shape(pred).0;
    let col = |tape: &mut Tape<'_, T>, v: Var, c: usize| tape.slice_cols(v, c, 1);
    let (px1, py1, px2, py2) = (
        col(tape, pred, 0),
        col(tape, pred, 1),
        col(tape, pred, 2),
        col(tape, pred, 3),
    );
    let (gx1, gy1, gx2, gy2) = (
        col(tape, target, 0),
        col(tape, target, 1),
        col(tape, target, 2),
        col(tape, target, 3),
    );
    let zero = tape.input(Array2::zeros((n, 1)));
    let eps = tape.input(Array2::from_elem((n, 1), T::lit(1e-9)));

    let ix1 = tape.max(px1, gx1);
    let iy1 = tape.max(py1, gy1);
    let ix2 = tape.min(px2, gx2);
    let iy2 = tape.min(py2, gy2);
    let iw = tape.sub(ix2, ix1);
    let iw = tape.max(iw, zero);
    let ih = tape.sub(iy2, iy1);
    let ih = tape.max(ih, zero);
    let inter = tape.mul(iw, ih);

    let pw = tape.sub(px2, px1);
    let pw = tape.max(pw, zero);
    let ph = tape.sub(py2, py1);
    let ph = tape.max(ph, zero);
    let pa = tape.mul(pw, ph);
    let gw = tape.sub(gx2, gx1);
    let gh = tape.sub(gy2, gy1);
    let ga = tape.mul(gw, gh);
    let union = tape.add(pa, ga);
    let union = tape.sub(union, inter);
    let union = tape.add(union, eps);
    let iou = tape.div(inter, union);

    let cx1 = tape.min(px1, gx1);
    let cy1 = tape.min(py1, gy1);
    let cx2 = tape.max(px2, gx2);
    let cy2 = tape.max(py2, gy2);
    let cw = tape.sub(cx2, cx1);
    let ch = tape.sub(cy2, cy1);
    let area_c = tape.mul(cw, ch);
    let area_c = tape.add(area_c, eps);
    let slack = tape.sub(area_c, union);
    let penalty = tape.div(slack, area_c);
    let giou = tape.sub(iou, penalty);
    let ones = tape.input(Array2::from_elem((n, 1), T::one()));
    let loss = tape.sub(ones, giou);
    tape.mean(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamW;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn giou_reference(a: [f64; 4], b: [f64; 4]) -> f64 {
        let inter =
            (a[2].min(b[2]) - a[0].max(b[0])).max(0.0) * (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
        let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
        let c = (a[2].max(b[2]) - a[0].min(b[0])) * (a[3].max(b[3]) - a[1].min(b[1]));
        inter / union - (c - union) / c
    }

    #[test]
    fn giou_matches_direct_formula() {
        let cases = [
            ([0.1, 0.1, 0.5, 0.5], [0.1, 0.1, 0.5, 0.5]),
            ([0.1, 0.1, 0.3, 0.3], [0.6, 0.6, 0.9, 0.8]),
            ([0.2, 0.1, 0.6, 0.5], [0.3, 0.3, 0.7, 0.9]),
        ];
        for (a, b) in cases {
            let store = ParamStore::<f64>::new();
            let mut tape = Tape::new(&store);
            let p = tape.input(Array2::from_shape_vec((1, 4), a.to_vec()).unwrap());
            let t = tape.input(Array2::from_shape_vec((1, 4), b.to_vec()).unwrap());
            let l = giou_loss(&mut tape, p, t);
            assert!((tape.scalar(l) - (1.0 - giou_reference(a, b))).abs() < 1e-7);
        }
    }

    #[test]
    fn assignment_uses_center_cell() {
        let gt = vec![
            GtObject {
                id: 0,
                bbox: BBox::new(0.0, 0.0, 0.2, 0.2).unwrap(),
                visible: true,
            },
            GtObject {
                id: 1,
                bbox: BBox::new(0.6, 0.6, 0.9, 0.9).unwrap(),
                visible: true,
            },
            GtObject {
                id: 2,
                bbox: BBox::new(0.6, 0.6, 0.9, 0.9).unwrap(),
                visible: false,
            },
        ];
        assert_eq!(ToyDetector::assign(&gt, 4, 4), vec![(0, 0), (15, 1)]);
    }

    #[test]
    fn detector_learns_a_fixed_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let det = ToyDetector::new(&mut store, 8, 6, &mut rng);
        let features = Array2::from_shape_fn((4, 8), |_| rng.random_range(-1.0..1.0));
        let gt = vec![GtObject {
            id: 0,
            bbox: BBox::new(0.55, 0.1, 0.85, 0.4).unwrap(),
            visible: true,
        }];
        let mut opt = AdamW::new(&store, 0.0);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..300 {
            let mut tape = Tape::new(&store);
            let f = tape.input(features.clone());
            let out = det.forward(&mut tape, f, 2, 2);
            let l = det.loss(&mut tape, &out, &gt);
            let a = tape.add(l.cls, l.l1.unwrap());
            let total = tape.add(a, l.giou.unwrap());
            last = tape.scalar(total);
            first.get_or_insert(last);
            let g = tape.backward(total).into_params();
            opt.step(&mut store, &g, 1e-2);
        }
        assert!(last < 0.1 * first.unwrap(), "{first:?} -> {last}");
        let mut tape = Tape::new(&store);
        let f = tape.input(features.clone());
        let out = det.forward(&mut tape, f, 2, 2);
        let dets = det.detections(&mut tape, &out, 0.5);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].0, 1);
        assert!(dets[0].1.bbox.iou(&gt[0].bbox) > 0.8);
        assert_eq!(dets[0].1.query_embedding.len(), 6);
    }
}
