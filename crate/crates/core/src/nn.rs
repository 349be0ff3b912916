//! Layers built on the autograd tape, plus the AdamW optimizer.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Mat, ParamGrads, ParamId, ParamStore, Tape, Var};
use crate::scalar::Scalar;

/// Weight initialization for a new layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// N(0, std²) entries.
    Normal(f64),
    /// Uniform Xavier/Glorot.
    Xavier,
    Zeros,
}

pub fn init_matrix<T: Scalar>(rows: usize, cols: usize, init: Init, rng: &mut impl Rng) -> Mat<T> {
    match init {
        Init::Zeros => Array2::zeros((rows, cols)),
        Init::Normal(std) => {
            let dist = Normal::new(0.0, std).expect("valid std");
            Array2::from_shape_fn((rows, cols), |_| T::lit(dist.sample(rng)))
        }
        Init::Xavier => {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| T::lit(rng.random_range(-bound..bound)))
        }
    }
}

/// `y = x·W + b` with `W` of shape in×out.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        init: Init,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init_matrix(d_in, d_out, init, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Array2::zeros((1, d_out))));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Var {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(
                format!("{name}.gamma"),
                Array2::from_elem((1, dim), T::one()),
            ),
            beta: store.add(format!("{name}.beta"), Array2::zeros((1, dim))),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Var {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Perceptron stack: Linear → GELU → Linear → … (no activation after the last layer).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists every layer boundary, e.g. `[64, 128, 128]` for two layers.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        assert!(widths.len() >= 2);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                Linear::new(
                    store,
                    &format!("{name}.{i}"),
                    w[0],
                    w[1],
                    Init::Xavier,
                    true,
                    rng,
                )
            })
            .collect();
        Self { layers }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, x);
            if i < last {
                x = tape.gelu(x);
            }
        }
        x
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("non-empty mlp")
    }
}

/// Multi-head scaled dot-product attention with separate query/key/value inputs.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        out_init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(
            heads > 0 && dim.is_multiple_of(heads),
            "dim {dim} not divisible by {heads} heads"
        );
        let std = Init::Normal(0.02);
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, std, true, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, std, true, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, std, true, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, out_init, true, rng),
            heads,
            dim,
        }
    }

    /// `query` is n×d; `key` and `value` are m×d. Causal masking requires n = m.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        query: Var,
        key: Var,
        value: Var,
        causal: bool,
    ) -> Var {
        self.forward_with(tape, query, key, value, causal, None)
    }

    /// Like `forward`, rotating every head's queries and keys when `rotary` is given.
    pub fn forward_with<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        query: Var,
        key: Var,
        value: Var,
        causal: bool,
        rotary: Option<&Rotary>,
    ) -> Var {
        let q = self.q.forward(tape, query);
        let k = self.k.forward(tape, key);
        let v = self.v.forward(tape, value);
        let dh = self.dim / self.heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh),
                    tape.slice_cols(k, h * dh, dh),
                    tape.slice_cols(v, h * dh, dh),
                )
            };
            let (qh, kh) = match rotary {
                Some(r) => (r.apply(tape, qh), r.apply(tape, kh)),
                None => (qh, kh),
            };
            let scores = tape.matmul_t(qh, kh);
            let scores = tape.scale(scores, scale);
            let weights = tape.softmax(scores, causal);
            outs.push(tape.matmul(weights, vh));
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        self.out.forward(tape, merged)
    }
}

/// Rotary position tables for one sequence length and head width.
#[derive(Clone, Copy, Debug)]
pub struct Rotary {
    cos: Var,
    sin: Var,
    rotate_half: Var,
}

impl Rotary {
    pub const BASE: f64 = 10_000.0;

    pub fn new<T: Scalar>(tape: &mut Tape<'_, T>, len: usize, head_dim: usize) -> Self {
        assert!(
            head_dim.is_multiple_of(2),
            "rotary embeddings need an even head width"
        );
        let half = head_dim / 2;
        let angle =
            |p: usize, j: usize| p as f64 * Self::BASE.powf(-((j % half) as f64) / half as f64);
        let cos = Mat::from_shape_fn((len, head_dim), |(p, j)| T::lit(angle(p, j).cos()));
        let sin = Mat::from_shape_fn((len, head_dim), |(p, j)| T::lit(angle(p, j).sin()));
        let mut rot = Mat::zeros((head_dim, head_dim));
        for j in 0..half {
            rot[[j + half, j]] = -T::one();
            rot[[j, j + half]] = T::one();
        }
        Self {
            cos: tape.input(cos),
            sin: tape.input(sin),
            rotate_half: tape.input(rot),
        }
    }

    /// Rotates the rows of `x` (len×head_dim) by their positions.
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Var {
        let a = tape.mul(x, self.cos);
        let turned = tape.matmul(x, self.rotate_half);
        let b = tape.mul(turned, self.sin);
        tape.add(a, b)
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Mat<T>>,
    second: Vec<Mat<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, weight_decay: f64) -> Self {
        let zeros: Vec<Mat<T>> = store
            .iter()
            .map(|(_, _, v)| Array2::zeros(v.dim()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Weight decay skips 1×n rows (biases and norm scales).
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let eps = T::lit(self.eps);
        let lr_t = T::lit(lr);
        let decay = T::lit(1.0 - lr * self.weight_decay);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let param = store.get_mut(id);
            if param.nrows() > 1 && self.weight_decay > 0.0 {
                param.mapv_inplace(|w| w * decay);
            }
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            ndarray::Zip::from(param)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *w -= lr_t * mh / (vh.sqrt() + eps);
                });
        }
    }
}
