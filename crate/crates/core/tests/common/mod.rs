//! Brute-force reference metrics for tiny inputs, written from the metric
//! definitions without sharing code with the library: IoU is recomputed
//! from corners and every matching is found by exhaustive enumeration.

#![allow(dead_code)]

use std::collections::BTreeMap;

use armot::simdata::{MotRecord, TrackingResult};
use rand::Rng;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Reference {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub idtp: usize,
    pub mota: f64,
    pub idf1: f64,
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
}

fn iou(a: &MotRecord, b: &MotRecord) -> f64 {
    let (ax2, ay2) = (a.left + a.width, a.top + a.height);
    let (bx2, by2) = (b.left + b.width, b.top + b.height);
    let w = (ax2.min(bx2) - a.left.max(b.left)).max(0.0);
    let h = (ay2.min(by2) - a.top.max(b.top)).max(0.0);
    let inter = w * h;
    let union = a.width * a.height + b.width * b.height - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Every one-to-one partial matching of `rows` items into `cols` items.
fn matchings(rows: usize, cols: usize) -> Vec<Vec<(usize, usize)>> {
    fn go(
        r: usize,
        rows: usize,
        cols: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if r == rows {
            out.push(cur.clone());
            return;
        }
        go(r + 1, rows, cols, used, cur, out);
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                cur.push((r, c));
                go(r + 1, rows, cols, used, cur, out);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(
        0,
        rows,
        cols,
        &mut vec![false; cols],
        &mut Vec::new(),
        &mut out,
    );
    out
}

/// Highest-weight matching using only pairs with positive weight.
fn best(weight: &dyn Fn(usize, usize) -> f64, rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut top = (f64::NEG_INFINITY, Vec::new());
    for m in matchings(rows, cols) {
        if m.iter().any(|&(r, c)| weight(r, c) <= 0.0) {
            continue;
        }
        let total: f64 = m.iter().map(|&(r, c)| weight(r, c)).sum();
        if total > top.0 + 1e-12 {
            top = (total, m);
        }
    }
    top.1
}

struct Frames {
    gt: Vec<Vec<MotRecord>>,
    pr: Vec<Vec<MotRecord>>,
}

fn frames(gt: &TrackingResult, pred: &TrackingResult) -> Frames {
    let n = gt
        .records
        .iter()
        .chain(&pred.records)
        .map(|r| r.frame)
        .max()
        .unwrap_or(0) as usize;
    let mut f = Frames {
        gt: vec![Vec::new(); n],
        pr: vec![Vec::new(); n],
    };
    for r in &gt.records {
        f.gt[r.frame as usize - 1].push(*r);
    }
    for r in &pred.records {
        f.pr[r.frame as usize - 1].push(*r);
    }
    f
}

fn ids(records: &[MotRecord]) -> Vec<i64> {
    let mut v: Vec<i64> = records.iter().map(|r| r.id).collect();
    v.sort();
    v.dedup();
    v
}

pub fn reference(gt: &TrackingResult, pred: &TrackingResult) -> Reference {
    let fr = frames(gt, pred);
    let mut out = Reference::default();
    let n_gt = gt.records.len();
    let n_pr = pred.records.len();

    // CLEAR: IoU >= 0.5 gates a pair; keeping last frame's pairing outranks any IoU gain.
    let mut prev: BTreeMap<i64, i64> = BTreeMap::new();
    let mut last: BTreeMap<i64, i64> = BTreeMap::new();
    for (g, p) in fr.gt.iter().zip(&fr.pr) {
        let w = |i: usize, j: usize| {
            let s = iou(&g[i], &p[j]);
            if s < 0.5 {
                return 0.0;
            }
            s + if prev.get(&g[i].id) == Some(&p[j].id) {
                1000.0
            } else {
                0.0
            }
        };
        let m = best(&w, g.len(), p.len());
        prev.clear();
        for &(i, j) in &m {
            if last.get(&g[i].id).is_some_and(|&q| q != p[j].id) {
                out.idsw += 1;
            }
            last.insert(g[i].id, p[j].id);
            prev.insert(g[i].id, p[j].id);
        }
        out.tp += m.len();
        out.fn_ += g.len() - m.len();
        out.fp += p.len() - m.len();
    }
    out.mota = 1.0 - (out.fn_ + out.fp + out.idsw) as f64 / n_gt.max(1) as f64;

    // IDF1: best global one-to-one identity map, counting frames with IoU >= 0.5.
    let gids = ids(&gt.records);
    let pids = ids(&pred.records);
    let overlap = |a: usize, b: usize| -> f64 {
        fr.gt
            .iter()
            .zip(&fr.pr)
            .map(|(g, p)| {
                let x = g.iter().find(|r| r.id == gids[a]);
                let y = p.iter().find(|r| r.id == pids[b]);
                match (x, y) {
                    (Some(x), Some(y)) if iou(x, y) >= 0.5 => 1.0,
                    _ => 0.0,
                }
            })
            .sum()
    };
    out.idtp = best(&overlap, gids.len(), pids.len())
        .iter()
        .map(|&(a, b)| overlap(a, b) as usize)
        .sum();
    out.idf1 = if n_gt + n_pr == 0 {
        1.0
    } else {
        2.0 * out.idtp as f64 / (n_gt + n_pr) as f64
    };

    // HOTA: per-frame matching maximizes alignment-weighted IoU, then thresholds at each alpha.
    let count =
        |records: &[MotRecord], id: i64| records.iter().filter(|r| r.id == id).count() as f64;
    let mut potential: BTreeMap<(i64, i64), f64> = BTreeMap::new();
    for (g, p) in fr.gt.iter().zip(&fr.pr) {
        for a in g {
            for b in p {
                let s = iou(a, b);
                let row: f64 = p.iter().map(|q| iou(a, q)).sum();
                let col: f64 = g.iter().map(|q| iou(q, b)).sum();
                let denom = row + col - s;
                if denom > f64::EPSILON {
                    *potential.entry((a.id, b.id)).or_default() += s / denom;
                }
            }
        }
    }
    let align = |a: i64, b: i64| {
        let pot = potential.get(&(a, b)).copied().unwrap_or(0.0);
        pot / (count(&gt.records, a) + count(&pred.records, b) - pot)
    };
    let alphas: Vec<f64> = (1..=19).map(|k| 0.05 * k as f64).collect();
    let frame_matches: Vec<Vec<(MotRecord, MotRecord)>> = fr
        .gt
        .iter()
        .zip(&fr.pr)
        .map(|(g, p)| {
            let w = |i: usize, j: usize| align(g[i].id, p[j].id) * iou(&g[i], &p[j]);
            best(&w, g.len(), p.len())
                .into_iter()
                .map(|(i, j)| (g[i], p[j]))
                .collect()
        })
        .collect();
    let (mut hota, mut det, mut ass) = (0.0, 0.0, 0.0);
    for &alpha in &alphas {
        let mut tp = 0usize;
        let mut pairs: BTreeMap<(i64, i64), f64> = BTreeMap::new();
        for m in &frame_matches {
            for (a, b) in m.iter().filter(|(a, b)| iou(a, b) >= alpha - f64::EPSILON) {
                tp += 1;
                *pairs.entry((a.id, b.id)).or_default() += 1.0;
            }
        }
        let (fn_, fp) = (n_gt - tp, n_pr - tp);
        let d = if tp + fn_ + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fn_ + fp) as f64
        };
        let a = if tp + fn_ + fp == 0 {
            1.0
        } else {
            let total: f64 = pairs
                .iter()
                .map(|(&(g, p), &c)| {
                    c * c / (count(&gt.records, g) + count(&pred.records, p) - c).max(1.0)
                })
                .sum();
            total / tp.max(1) as f64
        };
        hota += (d * a).sqrt();
        det += d;
        ass += a;
    }
    let n = alphas.len() as f64;
    out.hota = hota / n;
    out.det_a = det / n;
    out.ass_a = ass / n;
    out
}

/// Random small scenario: up to `max_frames` frames and `max_objects`
/// objects, with misses, false positives, jitter near the IoU gate, and
/// identity swaps.
pub fn random_pair(
    rng: &mut impl Rng,
    max_frames: usize,
    max_objects: usize,
) -> (TrackingResult, TrackingResult, u32) {
    let n_frames = rng.random_range(1..=max_frames);
    let n_obj = rng.random_range(0..=max_objects);
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    let rec = |frame: usize, id: i64, l: f64, t: f64, w: f64, h: f64| MotRecord {
        frame: frame as u32,
        id,
        left: l,
        top: t,
        width: w,
        height: h,
        conf: 1.0,
    };
    for f in 1..=n_frames {
        let mut pool: Vec<i64> = (1..=max_objects as i64).collect();
        for o in 0..n_obj {
            if rng.random::<f64>() < 0.15 {
                continue;
            }
            let (l, t) = (rng.random_range(0.0..60.0), rng.random_range(0.0..60.0));
            let (w, h) = (rng.random_range(5.0..30.0), rng.random_range(5.0..30.0));
            gt.push(rec(f, o as i64 + 1, l, t, w, h));
            if rng.random::<f64>() < 0.8 && !pool.is_empty() {
                let j = rng.random_range(-0.35..0.35) * w;
                let k = rng.random_range(-0.35..0.35) * h;
                let id = if rng.random::<f64>() < 0.7 && pool.contains(&(o as i64 + 1)) {
                    o as i64 + 1
                } else {
                    pool[rng.random_range(0..pool.len())]
                };
                pool.retain(|&x| x != id);
                pred.push(rec(f, id, l + j, t + k, w, h));
            }
        }
        if rng.random::<f64>() < 0.3 && !pool.is_empty() {
            let id = pool[rng.random_range(0..pool.len())];
            pred.push(rec(
                f,
                id,
                rng.random_range(0.0..60.0),
                rng.random_range(0.0..60.0),
                12.0,
                12.0,
            ));
        }
    }
    (
        TrackingResult::new(gt),
        TrackingResult::new(pred),
        n_frames as u32,
    )
}
