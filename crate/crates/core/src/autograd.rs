//! Tape-based reverse-mode differentiation over 2-D arrays.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Parameters
//! live in a [`ParamStore`] and are borrowed (not copied) by the tape, so one
//! store can back many tapes. [`Tape::backward`] walks the record in reverse
//! and returns gradients for every parameter and intermediate value.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::scalar::Scalar;

pub type Mat<T> = Array2<T>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable matrices.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Mat<T>>,
    lookup: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Mat<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.lookup.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.values.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn get(&self, id: ParamId) -> &Mat<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat<T> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat<T>)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (ParamId(i), self.names[i].as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

/// Gradients for the parameters of one store, aligned by [`ParamId`].
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn accumulate(&mut self, other: &ParamGrads<T>) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => *m += t,
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn global_norm(&self) -> T {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|&x| x * x).sum::<T>())
            .sum::<T>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.iter().all(|x| x.is_finite()))
    }
}

enum Value<T> {
    Owned(Mat<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    Max(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Sigmoid(Var),
    Abs(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat<T>,
        inv_std: Vec<T>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Stack(Vec<(Var, usize)>),
    MeanRows(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<(usize, usize)>,
        probs: Mat<T>,
    },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    vars: Vec<Option<Mat<T>>>,
    params: ParamGrads<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn var(&self, v: Var) -> Option<&Mat<T>> {
        self.vars[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Mat<T>> {
        self.params.get(id)
    }

    pub fn params(&self) -> &ParamGrads<T> {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads<T> {
        self.params
    }
}

/// Records a computation graph over matrices borrowed from a [`ParamStore`].
pub struct Tape<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, Var>,
}

const LN_EPS: f64 = 1e-5;

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, T> {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m.view(),
            Value::Param(id) => self.params.get(*id).view(),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> T {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    /// Constant input. Gradients are still reported for it.
    pub fn input(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Parameter leaf. Repeated calls for one id share a node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b))
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Mat<T> {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "elementwise shape mismatch");
        Zip::from(&va).and(&vb).map_collect(|&x, &y| f(x, y))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_map(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_map(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_map(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_map(a, b, |x, y| x / y);
        self.push(out, Op::Div(a, b))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_map(a, b, |x, y| if x <= y { x } else { y });
        self.push(out, Op::Min(a, b))
    }

    pub fn max(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_map(a, b, |x, y| if x >= y { x } else { y });
        self.push(out, Op::Max(a, b))
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = {
            let (va, vr) = (self.value(a), self.value(row));
            assert_eq!(vr.nrows(), 1);
            assert_eq!(va.ncols(), vr.ncols(), "bias width mismatch");
            &va + &vr
        };
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).mapv(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.abs());
        self.push(out, Op::Abs(a))
    }

    /// Row-wise softmax. With `causal`, entry (i, j) for j > i is masked out.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let mut out = self.value(a).to_owned();
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let live = if causal {
                (i + 1).min(row.len())
            } else {
                row.len()
            };
            let max = row
                .iter()
                .take(live)
                .fold(T::neg_infinity(), |m, &x| if x > m { x } else { m });
            let mut total = T::zero();
            for (j, x) in row.iter_mut().enumerate() {
                if j < live {
                    *x = (*x - max).exp();
                    total += *x;
                } else {
                    *x = T::zero();
                }
            }
            row.mapv_inplace(|x| x / total);
        }
        self.push(out, Op::Softmax(a))
    }

    /// Row-wise layer normalization with 1×n `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (out, xhat, inv_std) = {
            let vx = self.value(x);
            let (vg, vb) = (self.value(gamma), self.value(beta));
            let n = T::lit(vx.ncols() as f64);
            let eps = T::lit(LN_EPS);
            let mut xhat = vx.to_owned();
            let mut inv_std = Vec::with_capacity(vx.nrows());
            for mut row in xhat.axis_iter_mut(Axis(0)) {
                let mean = row.sum() / n;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                let inv = T::one() / (var + eps).sqrt();
                row.mapv_inplace(|v| (v - mean) * inv);
                inv_std.push(inv);
            }
            let out = &(&xhat * &vg) + &vb;
            (out, xhat, inv_std)
        };
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows col mismatch");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start))
    }

    /// Builds a matrix whose k-th row is row `r` of `v` for `rows[k] = (v, r)`.
    pub fn stack_rows(&mut self, rows: &[(Var, usize)]) -> Var {
        assert!(!rows.is_empty(), "stack_rows needs at least one row");
        let width = self.value(rows[0].0).ncols();
        let mut out = Mat::zeros((rows.len(), width));
        for (k, &(v, r)) in rows.iter().enumerate() {
            out.row_mut(k).assign(&self.value(v).row(r));
        }
        self.push(out, Op::Stack(rows.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let rows: Vec<_> = idx.iter().map(|&r| (a, r)).collect();
        self.stack_rows(&rows)
    }

    /// Column means, as a 1×n row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = {
            let va = self.value(a);
            let n = T::lit(va.nrows() as f64);
            va.sum_axis(Axis(0)).mapv(|x| x / n).insert_axis(Axis(0))
        };
        self.push(out, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Mat::from_elem((1, 1), total), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Mean cross-entropy of `logits` rows against `(row, class)` targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)]) -> Var {
        assert!(!targets.is_empty(), "cross_entropy needs targets");
        let (loss, probs) = {
            let vl = self.value(logits);
            let mut probs = Mat::zeros(vl.dim());
            for (i, row) in vl.axis_iter(Axis(0)).enumerate() {
                let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
                let mut total = T::zero();
                for (j, &x) in row.iter().enumerate() {
                    let e = (x - max).exp();
                    probs[[i, j]] = e;
                    total += e;
                }
                probs.row_mut(i).mapv_inplace(|x| x / total);
            }
            let mut loss = T::zero();
            for &(r, c) in targets {
                loss -= probs[[r, c]].max(T::min_positive_value()).ln();
            }
            (loss / T::lit(targets.len() as f64), probs)
        };
        self.push(
            Mat::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Reverse pass from a 1×1 node.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Mat<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Mat::from_elem((1, 1), T::one()));
        let mut params = ParamGrads::zeros_like(self.params);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if let Value::Param(id) = node.value {
                        match &mut params.grads[id.0] {
                            Some(acc) => *acc += &g,
                            slot => *slot = Some(g.clone()),
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(&self.value(*b));
                    let gb = g.t().dot(&self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.mapv(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.value(*b);
                    let gb = &g * &self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = Zip::from(&g).and(&vb).map_collect(|&g, &y| g / y);
                    let gb = Zip::from(&g)
                        .and(&va)
                        .and(&vb)
                        .map_collect(|&g, &x, &y| -g * x / (y * y));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Min(a, b) | Op::Max(a, b) => {
                    let pick_min = matches!(node.op, Op::Min(..));
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = Mat::zeros(g.dim());
                    let mut gb = Mat::zeros(g.dim());
                    Zip::from(&mut ga)
                        .and(&mut gb)
                        .and(&g)
                        .and(&va)
                        .and(&vb)
                        .for_each(|ga, gb, &g, &x, &y| {
                            let first = if pick_min { x <= y } else { x >= y };
                            if first {
                                *ga = g;
                            } else {
                                *gb = g;
                            }
                        });
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *row, gr);
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    accumulate(&mut grads, *a, g.mapv(|x| x * f));
                }
                Op::Gelu(a) => {
                    let ga = Zip::from(&g)
                        .and(&self.value(*a))
                        .map_collect(|&g, &x| g * gelu_grad(x));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = self.value(Var(i));
                    let ga = Zip::from(&g)
                        .and(&y)
                        .map_collect(|&g, &y| g * y * (T::one() - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Abs(a) => {
                    let ga = Zip::from(&g)
                        .and(&self.value(*a))
                        .map_collect(|&g, &x| g * x.signum());
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = self.value(Var(i));
                    let mut ga = &g * &y;
                    for (mut grow, yrow) in ga.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))) {
                        let dot = grow.sum();
                        Zip::from(&mut grow).and(&yrow).for_each(|gy, &yv| {
                            *gy -= yv * dot;
                        });
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let vg = self.value(*gamma);
                    let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ggamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * &vg;
                    let n = T::lit(xhat.ncols() as f64);
                    let mut gx = Mat::zeros(g.dim());
                    for r in 0..g.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let mean_dh = dh.sum() / n;
                        let mean_dh_xh =
                            dh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / n;
                        let inv = inv_std[r];
                        for c in 0..g.ncols() {
                            gx[[r, c]] = inv * (dh[c] - mean_dh - xh[c] * mean_dh_xh);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, ggamma);
                    accumulate(&mut grads, *beta, gbeta);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        accumulate(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        accumulate(&mut grads, p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Stack(rows) => {
                    for (k, &(v, r)) in rows.iter().enumerate() {
                        let slot = &mut grads[v.0];
                        let acc = slot.get_or_insert_with(|| Mat::zeros(self.value(v).dim()));
                        let mut dst = acc.row_mut(r);
                        dst += &g.row(k);
                    }
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.value(*a).dim();
                    let inv = T::one() / T::lit(rows as f64);
                    let row = g.row(0).mapv(|x| x * inv);
                    let ga = row.broadcast((rows, cols)).expect("broadcast").to_owned();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Mat::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    accumulate(&mut grads, *a, ga);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g[[0, 0]] / T::lit(targets.len() as f64);
                    let mut gl = Mat::zeros(probs.dim());
                    for &(r, c) in targets {
                        let mut row = gl.row_mut(r);
                        row += &probs.row(r);
                        row[c] -= T::one();
                    }
                    gl.mapv_inplace(|x| x * scale);
                    accumulate(&mut grads, *logits, gl);
                }
            }
            grads[i] = Some(g);
        }
        Gradients {
            vars: grads,
            params,
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Mat<T>>], v: Var, g: Mat<T>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::lit(3.0) * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
