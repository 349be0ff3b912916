//! Tracking metrics: CLEAR (MOTA), identity F1 and HOTA with its detection
//! and association factors.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simdata::{MotRecord, TrackingResult};

/// IoU threshold for CLEAR and identity matching.
pub const IOU_THRESHOLD: f64 = 0.5;

const EPS: f64 = f64::EPSILON;

/// Bonus that makes CLEAR prefer keeping last frame's pairing.
const CONTINUITY_BONUS: f64 = 1000.0;

/// Localization thresholds 0.05, 0.10, …, 0.95.
pub fn alphas() -> [f64; 19] {
    std::array::from_fn(|k| 0.05 * (k + 1) as f64)
}

/// Minimum-cost assignment on a rectangular matrix. Returns the column of
/// each row; when there are more rows than columns, some rows stay `None`.
pub fn hungarian_min(cost: &Array2<f64>) -> Vec<Option<usize>> {
    let (rows, cols) = cost.dim();
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let by_col = hungarian_min(&cost.t().to_owned());
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }
    // Shortest augmenting paths with potentials, 1-based with a sentinel column 0.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Maximum-weight assignment; pairs are returned in row order.
pub fn hungarian_max(weight: &Array2<f64>) -> Vec<(usize, usize)> {
    let neg = weight.mapv(|w| -w);
    hungarian_min(&neg)
        .into_iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| (r, c)))
        .collect()
}

/// IoU matrix between two record lists.
pub fn iou_matrix(gt: &[MotRecord], pred: &[MotRecord]) -> Array2<f64> {
    Array2::from_shape_fn((gt.len(), pred.len()), |(i, j)| gt[i].iou(&pred[j]))
}

/// Maximum-total-similarity one-to-one matching, excluding pairs below `threshold`.
pub fn match_similarity(sim: &Array2<f64>, threshold: f64) -> Vec<(usize, usize)> {
    let w = sim.mapv(|s| if s >= threshold - EPS { s } else { 0.0 });
    hungarian_max(&w)
        .into_iter()
        .filter(|&(i, j)| sim[[i, j]] >= threshold - EPS)
        .collect()
}

/// IoU matching of one frame's boxes.
pub fn match_frame(
    gt: &[MotRecord],
    pred: &[MotRecord],
    iou_threshold: f64,
) -> Vec<(usize, usize)> {
    match_similarity(&iou_matrix(gt, pred), iou_threshold)
}

/// HOTA components at one localization threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlphaScores {
    pub alpha: f64,
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mota: f64,
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub idtp: usize,
    pub num_gt: usize,
    pub num_pred: usize,
    pub per_alpha: Vec<AlphaScores>,
}

fn ratio(num: f64, den: f64, empty: f64) -> f64 {
    if den == 0.0 {
        empty
    } else {
        num / den
    }
}

impl EvalReport {
    fn finish(&mut self) {
        self.mota = 1.0 - (self.fn_ + self.fp + self.idsw) as f64 / self.num_gt.max(1) as f64;
        let perfect = if self.num_pred == 0 { 1.0 } else { 0.0 };
        self.idp = ratio(
            self.idtp as f64,
            self.num_pred as f64,
            if self.num_gt == 0 { 1.0 } else { 0.0 },
        );
        self.idr = ratio(self.idtp as f64, self.num_gt as f64, perfect);
        self.idf1 = ratio(
            2.0 * self.idtp as f64,
            (self.num_gt + self.num_pred) as f64,
            1.0,
        );
        for a in &mut self.per_alpha {
            a.det_a = ratio(a.tp as f64, (a.tp + a.fn_ + a.fp) as f64, 1.0);
            a.hota = (a.det_a * a.ass_a).sqrt();
        }
        let n = self.per_alpha.len().max(1) as f64;
        self.hota = self.per_alpha.iter().map(|a| a.hota).sum::<f64>() / n;
        self.det_a = self.per_alpha.iter().map(|a| a.det_a).sum::<f64>() / n;
        self.ass_a = self.per_alpha.iter().map(|a| a.ass_a).sum::<f64>() / n;
    }

    /// Pools several sequences: counts add up, AssA is averaged with TP weights.
    pub fn combine(reports: &[EvalReport]) -> EvalReport {
        let mut out = EvalReport {
            per_alpha: alphas()
                .iter()
                .map(|&alpha| AlphaScores {
                    alpha,
                    ass_a: 1.0,
                    ..Default::default()
                })
                .collect(),
            ..Default::default()
        };
        for r in reports {
            out.tp += r.tp;
            out.fp += r.fp;
            out.fn_ += r.fn_;
            out.idsw += r.idsw;
            out.idtp += r.idtp;
            out.num_gt += r.num_gt;
            out.num_pred += r.num_pred;
        }
        for (k, a) in out.per_alpha.iter_mut().enumerate() {
            let (mut weighted, mut tp) = (0.0, 0);
            for r in reports {
                let ra = &r.per_alpha[k];
                weighted += ra.ass_a * ra.tp as f64;
                tp += ra.tp;
                a.fn_ += ra.fn_;
                a.fp += ra.fp;
            }
            a.tp = tp;
            a.ass_a = if tp == 0 {
                if a.fn_ + a.fp == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                weighted / tp as f64
            };
        }
        out.finish();
        out
    }

    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "HOTA", "DetA", "AssA", "MOTA", "IDF1", "IDP", "IDR"
        );
        let _ = writeln!(
            s,
            "{:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            self.hota, self.det_a, self.ass_a, self.mota, self.idf1, self.idp, self.idr
        );
        let _ = writeln!(
            s,
            "TP {}  FP {}  FN {}  IDSW {}  GT {}  PRED {}",
            self.tp, self.fp, self.fn_, self.idsw, self.num_gt, self.num_pred
        );
        let _ = writeln!(
            s,
            "\n{:>6} {:>8} {:>8} {:>8}",
            "alpha", "HOTA", "DetA", "AssA"
        );
        for a in &self.per_alpha {
            let _ = writeln!(
                s,
                "{:>6.2} {:>8.4} {:>8.4} {:>8.4}",
                a.alpha, a.hota, a.det_a, a.ass_a
            );
        }
        s
    }

    /// `key=value` lines.
    pub fn to_summary(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("hota", self.hota),
            ("deta", self.det_a),
            ("assa", self.ass_a),
            ("mota", self.mota),
            ("idf1", self.idf1),
            ("idp", self.idp),
            ("idr", self.idr),
        ] {
            let _ = writeln!(s, "{k}={v:.9}");
        }
        for (k, v) in [
            ("tp", self.tp),
            ("fp", self.fp),
            ("fn", self.fn_),
            ("idsw", self.idsw),
            ("idtp", self.idtp),
            ("num_gt", self.num_gt),
            ("num_pred", self.num_pred),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// One frame with identities mapped to dense indices.
struct Frame {
    gt: Vec<usize>,
    pr: Vec<usize>,
    sim: Array2<f64>,
}

fn dense_ids(result: &TrackingResult) -> BTreeMap<i64, usize> {
    let mut ids: Vec<i64> = result.records.iter().map(|r| r.id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
}

fn check_frames(result: &TrackingResult, what: &str, n_frames: u32) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for r in &result.records {
        if r.frame == 0 || r.frame > n_frames {
            return Err(Error::FrameRange(format!(
                "{what} has frame {} outside 1..={n_frames}",
                r.frame
            )));
        }
        if !seen.insert((r.frame, r.id)) {
            return Err(Error::FrameRange(format!(
                "{what} repeats id {} in frame {}",
                r.id, r.frame
            )));
        }
    }
    Ok(())
}

/// Evaluates `pred` against `gt` over frames `1..=gt.max_frame()`.
pub fn evaluate(gt: &TrackingResult, pred: &TrackingResult) -> Result<EvalReport> {
    let n = if gt.is_empty() {
        pred.max_frame()
    } else {
        gt.max_frame()
    };
    evaluate_frames(gt, pred, n)
}

/// Evaluates over frames `1..=n_frames`; records outside that range are an error.
pub fn evaluate_frames(
    gt: &TrackingResult,
    pred: &TrackingResult,
    n_frames: u32,
) -> Result<EvalReport> {
    check_frames(gt, "ground truth", n_frames)?;
    check_frames(pred, "prediction", n_frames)?;
    let gt_ids = dense_ids(gt);
    let pr_ids = dense_ids(pred);
    let (gt_frames, pr_frames) = (gt.by_frame(), pred.by_frame());
    let empty = Vec::new();
    let frames: Vec<Frame> = (1..=n_frames)
        .map(|f| {
            let g = gt_frames.get(&f).unwrap_or(&empty);
            let p = pr_frames.get(&f).unwrap_or(&empty);
            Frame {
                gt: g.iter().map(|r| gt_ids[&r.id]).collect(),
                pr: p.iter().map(|r| pr_ids[&r.id]).collect(),
                sim: iou_matrix(g, p),
            }
        })
        .collect();

    let mut report = EvalReport {
        num_gt: gt.len(),
        num_pred: pred.len(),
        ..Default::default()
    };
    clear(&frames, gt_ids.len(), &mut report);
    report.idtp = identity_tp(&frames, gt_ids.len(), pr_ids.len());
    report.per_alpha = hota(&frames, gt_ids.len(), pr_ids.len());
    report.finish();
    Ok(report)
}

fn clear(frames: &[Frame], n_gt_ids: usize, report: &mut EvalReport) {
    let mut last: Vec<Option<usize>> = vec![None; n_gt_ids];
    let mut previous_frame: Vec<Option<usize>> = vec![None; n_gt_ids];
    for f in frames {
        let mut score = f
            .sim
            .mapv(|s| if s >= IOU_THRESHOLD - EPS { s } else { 0.0 });
        for (i, &g) in f.gt.iter().enumerate() {
            for (j, &p) in f.pr.iter().enumerate() {
                if score[[i, j]] > 0.0 && previous_frame[g] == Some(p) {
                    score[[i, j]] += CONTINUITY_BONUS;
                }
            }
        }
        let matches: Vec<(usize, usize)> = hungarian_max(&score)
            .into_iter()
            .filter(|&(i, j)| score[[i, j]] > EPS)
            .collect();
        previous_frame.iter_mut().for_each(|p| *p = None);
        for &(i, j) in &matches {
            let (g, p) = (f.gt[i], f.pr[j]);
            if last[g].is_some_and(|q| q != p) {
                report.idsw += 1;
            }
            last[g] = Some(p);
            previous_frame[g] = Some(p);
        }
        report.tp += matches.len();
        report.fn_ += f.gt.len() - matches.len();
        report.fp += f.pr.len() - matches.len();
    }
}

fn identity_tp(frames: &[Frame], n_gt_ids: usize, n_pr_ids: usize) -> usize {
    if n_gt_ids == 0 || n_pr_ids == 0 {
        return 0;
    }
    let mut overlap = Array2::<f64>::zeros((n_gt_ids, n_pr_ids));
    for f in frames {
        for (i, &g) in f.gt.iter().enumerate() {
            for (j, &p) in f.pr.iter().enumerate() {
                if f.sim[[i, j]] >= IOU_THRESHOLD - EPS {
                    overlap[[g, p]] += 1.0;
                }
            }
        }
    }
    hungarian_max(&overlap)
        .into_iter()
        .map(|(g, p)| overlap[[g, p]] as usize)
        .sum()
}

fn hota(frames: &[Frame], n_gt_ids: usize, n_pr_ids: usize) -> Vec<AlphaScores> {
    let grid = alphas();
    let mut potential = Array2::<f64>::zeros((n_gt_ids, n_pr_ids));
    let mut gt_count = vec![0.0; n_gt_ids];
    let mut pr_count = vec![0.0; n_pr_ids];
    for f in frames {
        let row_sum = f.sim.sum_axis(ndarray::Axis(1));
        let col_sum = f.sim.sum_axis(ndarray::Axis(0));
        for (i, &g) in f.gt.iter().enumerate() {
            for (j, &p) in f.pr.iter().enumerate() {
                let s = f.sim[[i, j]];
                let denom = row_sum[i] + col_sum[j] - s;
                if denom > EPS {
                    potential[[g, p]] += s / denom;
                }
            }
        }
        f.gt.iter().for_each(|&g| gt_count[g] += 1.0);
        f.pr.iter().for_each(|&p| pr_count[p] += 1.0);
    }
    let global = Array2::from_shape_fn((n_gt_ids, n_pr_ids), |(g, p)| {
        potential[[g, p]] / (gt_count[g] + pr_count[p] - potential[[g, p]])
    });

    let mut out: Vec<AlphaScores> = grid
        .iter()
        .map(|&alpha| AlphaScores {
            alpha,
            ..Default::default()
        })
        .collect();
    let mut matches: Vec<Array2<f64>> = vec![Array2::zeros((n_gt_ids, n_pr_ids)); grid.len()];
    for f in frames {
        if f.gt.is_empty() || f.pr.is_empty() {
            for a in &mut out {
                a.fn_ += f.gt.len();
                a.fp += f.pr.len();
            }
            continue;
        }
        let score = Array2::from_shape_fn(f.sim.dim(), |(i, j)| {
            global[[f.gt[i], f.pr[j]]] * f.sim[[i, j]]
        });
        let pairs = hungarian_max(&score);
        for (k, a) in out.iter_mut().enumerate() {
            let kept: Vec<&(usize, usize)> = pairs
                .iter()
                .filter(|&&(i, j)| f.sim[[i, j]] >= a.alpha - EPS)
                .collect();
            a.tp += kept.len();
            a.fn_ += f.gt.len() - kept.len();
            a.fp += f.pr.len() - kept.len();
            for &&(i, j) in &kept {
                matches[k][[f.gt[i], f.pr[j]]] += 1.0;
            }
        }
    }
    for (k, a) in out.iter_mut().enumerate() {
        let m = &matches[k];
        let mut total = 0.0;
        for ((g, p), &c) in m.indexed_iter() {
            if c > 0.0 {
                total += c * c / (gt_count[g] + pr_count[p] - c).max(1.0);
            }
        }
        a.ass_a = if a.tp + a.fn_ + a.fp == 0 {
            1.0
        } else {
            total / a.tp.max(1) as f64
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn rec(frame: u32, id: i64, left: f64, top: f64) -> MotRecord {
        MotRecord {
            frame,
            id,
            left,
            top,
            width: 10.0,
            height: 10.0,
            conf: 1.0,
        }
    }

    fn brute_min(cost: &Array2<f64>) -> f64 {
        // Every assignment of the smaller side into the larger one.
        fn go(cost: &Array2<f64>, r: usize, used: &mut Vec<bool>) -> f64 {
            if r == cost.nrows() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..cost.ncols() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost[[r, c]] + go(cost, r + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        let c = if cost.nrows() <= cost.ncols() {
            cost.clone()
        } else {
            cost.t().to_owned()
        };
        go(&c, 0, &mut vec![false; c.ncols()])
    }

    proptest! {
        #[test]
        fn hungarian_matches_enumeration(rows in 1usize..5, cols in 1usize..5, seed in proptest::collection::vec(0.0f64..10.0, 16)) {
            let cost = Array2::from_shape_fn((rows, cols), |(i, j)| seed[i * 4 + j]);
            let assign = hungarian_min(&cost);
            let total: f64 = assign.iter().enumerate().filter_map(|(r, c)| c.map(|c| cost[[r, c]])).sum();
            prop_assert_eq!(assign.iter().filter(|c| c.is_some()).count(), rows.min(cols));
            let mut cols_used: Vec<usize> = assign.iter().flatten().copied().collect();
            cols_used.sort();
            cols_used.dedup();
            prop_assert_eq!(cols_used.len(), rows.min(cols));
            prop_assert!((total - brute_min(&cost)).abs() < 1e-9);
        }
    }

    #[test]
    fn matching_examples() {
        let sim = array![[0.9, 0.6], [0.55, 0.8]];
        assert_eq!(match_similarity(&sim, 0.5), vec![(0, 0), (1, 1)]);
        let gt = [rec(1, 1, 0.0, 0.0), rec(1, 2, 50.0, 0.0)];
        assert_eq!(match_frame(&gt, &gt, 0.5), vec![(0, 0), (1, 1)]);
        let far = [rec(1, 1, 200.0, 200.0), rec(1, 2, 300.0, 0.0)];
        assert!(match_frame(&gt, &far, 0.5).is_empty());
        let sim = array![[0.4, 0.0], [0.0, 0.45]];
        assert!(match_similarity(&sim, 0.5).is_empty());
    }

    #[test]
    fn perfect_tracker_scores_one() {
        let gt = TrackingResult::new(vec![
            rec(1, 1, 0.0, 0.0),
            rec(1, 2, 40.0, 0.0),
            rec(2, 1, 2.0, 0.0),
            rec(3, 2, 44.0, 1.0),
        ]);
        let r = evaluate(&gt, &gt).unwrap();
        for v in [r.mota, r.idf1, r.hota, r.det_a, r.ass_a] {
            assert!((v - 1.0).abs() < 1e-12, "{}", r.to_text());
        }
        assert_eq!(r.idsw, 0);
        let empty = TrackingResult::default();
        let r = evaluate(&empty, &empty).unwrap();
        assert_eq!((r.mota, r.idf1, r.hota), (1.0, 1.0, 1.0));
    }

    #[test]
    fn one_missed_object() {
        let gt = TrackingResult::new(vec![rec(1, 1, 0.0, 0.0), rec(1, 2, 40.0, 0.0)]);
        let pred = TrackingResult::new(vec![rec(1, 7, 0.0, 0.0)]);
        let r = evaluate(&gt, &pred).unwrap();
        assert_eq!((r.tp, r.fn_, r.fp), (1, 1, 0));
        assert!((r.mota - 0.5).abs() < 1e-12);
        assert!((r.idf1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identity_switch_counts_once() {
        let gt = TrackingResult::new(vec![rec(1, 1, 0.0, 0.0), rec(2, 1, 0.0, 0.0)]);
        let pred = TrackingResult::new(vec![rec(1, 5, 0.0, 0.0), rec(2, 6, 0.0, 0.0)]);
        let r = evaluate(&gt, &pred).unwrap();
        assert_eq!(r.idsw, 1);
        assert!((r.mota - 0.5).abs() < 1e-12);
        assert!(r.ass_a < 1.0);
        // Each half-overlapping pairing has A = 1/(2+1-1) = 1/2.
        assert!((r.ass_a - 0.5).abs() < 1e-12);
        assert!((r.det_a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn switch_is_counted_against_last_match_across_gaps() {
        let gt = TrackingResult::new(vec![
            rec(1, 1, 0.0, 0.0),
            rec(2, 1, 0.0, 0.0),
            rec(3, 1, 0.0, 0.0),
        ]);
        let pred = TrackingResult::new(vec![rec(1, 5, 0.0, 0.0), rec(3, 6, 0.0, 0.0)]);
        let r = evaluate(&gt, &pred).unwrap();
        assert_eq!((r.idsw, r.fn_), (1, 1));
    }

    #[test]
    fn continuity_keeps_previous_pairing() {
        // Frame 2: pred 6 overlaps slightly better, but 5 continues the track.
        let gt = TrackingResult::new(vec![rec(1, 1, 0.0, 0.0), rec(2, 1, 0.0, 0.0)]);
        let pred = TrackingResult::new(vec![
            rec(1, 5, 0.0, 0.0),
            rec(2, 5, 1.0, 0.0),
            rec(2, 6, 0.5, 0.0),
        ]);
        let r = evaluate(&gt, &pred).unwrap();
        assert_eq!((r.idsw, r.tp, r.fp), (0, 2, 1));
    }

    #[test]
    fn frame_range_is_checked() {
        let gt = TrackingResult::new(vec![rec(1, 1, 0.0, 0.0)]);
        let pred = TrackingResult::new(vec![rec(3, 1, 0.0, 0.0)]);
        assert!(matches!(evaluate(&gt, &pred), Err(Error::FrameRange(_))));
        let dup = TrackingResult::new(vec![rec(1, 1, 0.0, 0.0), rec(1, 1, 5.0, 0.0)]);
        assert!(matches!(evaluate(&gt, &dup), Err(Error::FrameRange(_))));
    }

    #[test]
    fn combine_of_one_is_identity() {
        let gt = TrackingResult::new(vec![
            rec(1, 1, 0.0, 0.0),
            rec(2, 1, 0.0, 0.0),
            rec(2, 2, 30.0, 0.0),
        ]);
        let pred = TrackingResult::new(vec![rec(1, 5, 1.0, 0.0), rec(2, 6, 0.0, 2.0)]);
        let r = evaluate(&gt, &pred).unwrap();
        let c = EvalReport::combine(std::slice::from_ref(&r));
        assert!(
            (c.hota - r.hota).abs() < 1e-12
                && (c.mota - r.mota).abs() < 1e-12
                && (c.idf1 - r.idf1).abs() < 1e-12
        );
        assert!(r.to_summary().contains("idsw=1"));
    }

    fn arb_result(max_frames: u32, max_ids: i64) -> impl Strategy<Value = TrackingResult> {
        proptest::collection::vec(
            (1..=max_frames, 1..=max_ids, 0.0f64..30.0, 0.0f64..30.0),
            0..12,
        )
        .prop_map(|v| {
            let mut seen = std::collections::BTreeSet::new();
            TrackingResult::new(
                v.into_iter()
                    .filter(|(f, id, ..)| seen.insert((*f, *id)))
                    .map(|(f, id, x, y)| rec(f, id, x, y))
                    .collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn scores_stay_in_range(gt in arb_result(4, 4), pred in arb_result(4, 4)) {
            let r = evaluate_frames(&gt, &pred, 4).unwrap();
            for v in [r.idf1, r.hota, r.det_a, r.ass_a] {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
            }
            prop_assert!(r.mota <= 1.0);
            for a in &r.per_alpha {
                prop_assert!((a.hota - (a.det_a * a.ass_a).sqrt()).abs() < 1e-9);
            }
        }

        #[test]
        fn self_evaluation_is_perfect(gt in arb_result(4, 4)) {
            let r = evaluate_frames(&gt, &gt, 4).unwrap();
            prop_assert_eq!(r.mota, 1.0);
            prop_assert!((r.hota - 1.0).abs() < 1e-9 && (r.idf1 - 1.0).abs() < 1e-12);
        }

        #[test]
        fn extra_false_positive_never_raises_mota(gt in arb_result(3, 3), pred in arb_result(3, 3), x in 0.0f64..30.0) {
            let before = evaluate_frames(&gt, &pred, 3).unwrap();
            let mut more = pred.clone();
            more.records.push(rec(2, 99, x, 80.0));
            let after = evaluate_frames(&gt, &more, 3).unwrap();
            prop_assert!(after.mota <= before.mota + 1e-12);
        }
    }
}
