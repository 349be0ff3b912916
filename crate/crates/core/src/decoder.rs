//! Causal transformer decoder over heterogeneous slots.
//!
//! Discrete slots are rows of a shared embedding table whose first K+1 rows
//! (concrete IDs and `<new>`) double as the output head; continuous slots are
//! injected as-is. Pre-norm blocks; positions are rotary by default.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::domain::IdVocabulary;
use crate::error::{Error, Result};
use crate::nn::{Init, LayerNorm, Linear, MultiHeadAttention, Rotary};
use crate::scalar::Scalar;
use crate::sequence::{Slot, TokenSequence};

/// A continuous slot: row `.1` of tape variable `.0`.
pub type RowRef = (Var, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_lm: usize,
    pub ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub positional: Positional,
    /// Std of the shared ID/bin embedding table.
    pub embed_std: f64,
}

/// How slot order reaches attention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positional {
    /// A trainable table added to the inputs, initialised sinusoidally.
    Learned,
    /// Rotary embeddings on every head's queries and keys.
    #[default]
    Rope,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            heads: 4,
            d_lm: 128,
            ff: 512,
            max_len: 256,
            dropout: 0.0,
            positional: Positional::default(),
            embed_std: 0.125,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0
            || self.heads == 0
            || self.d_lm == 0
            || self.ff == 0
            || self.max_len == 0
        {
            return Err(Error::InvalidConfig(
                "decoder sizes must be positive".into(),
            ));
        }
        if !self.d_lm.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "d_lm {} is not divisible by {} heads",
                self.d_lm, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must lie in [0,1)".into()));
        }
        if self.positional == Positional::Rope && !(self.d_lm / self.heads).is_multiple_of(2) {
            return Err(Error::InvalidConfig(
                "rotary embeddings need an even head width".into(),
            ));
        }
        if !(self.embed_std > 0.0 && self.embed_std.is_finite()) {
            return Err(Error::InvalidConfig("embed_std must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub vocab: IdVocabulary,
    /// `table_rows × d_lm`; rows `0..=K` are also the output head.
    pub embed: ParamId,
    /// Present only for learned positions.
    pub pos: Option<ParamId>,
    pub blocks: Vec<Block>,
    pub final_norm: LayerNorm,
}

/// Hidden states for every slot and logits for every predict position.
#[derive(Clone, Copy, Debug)]
pub struct DecoderOutput {
    /// len × d_lm.
    pub hidden: Var,
    /// |predict_positions| × (K+1); `None` when the sequence has no predict positions.
    pub logits: Option<Var>,
}

fn sinusoidal<T: Scalar>(len: usize, dim: usize) -> Array2<T> {
    Array2::from_shape_fn((len, dim), |(p, i)| {
        let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        let angle = p as f64 * rate;
        T::lit(0.1 * if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

impl Decoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        cfg: &DecoderConfig,
        vocab: IdVocabulary,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_lm;
        let embed = store.add(
            "decoder.embed",
            crate::nn::init_matrix(vocab.table_rows(), d, Init::Normal(cfg.embed_std), rng),
        );
        let pos = (cfg.positional == Positional::Learned)
            .then(|| store.add("decoder.pos", sinusoidal(cfg.max_len, d)));
        let proj_std = 0.02 / (2.0 * cfg.layers as f64).sqrt();
        let blocks = (0..cfg.layers)
            .map(|l| {
                let name = format!("decoder.block{l}");
                Block {
                    ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
                    attn: MultiHeadAttention::new(
                        store,
                        &format!("{name}.attn"),
                        d,
                        cfg.heads,
                        Init::Normal(proj_std),
                        rng,
                    ),
                    ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
                    ff1: Linear::new(
                        store,
                        &format!("{name}.ff1"),
                        d,
                        cfg.ff,
                        Init::Normal(0.02),
                        true,
                        rng,
                    ),
                    ff2: Linear::new(
                        store,
                        &format!("{name}.ff2"),
                        cfg.ff,
                        d,
                        Init::Normal(proj_std),
                        true,
                        rng,
                    ),
                }
            })
            .collect();
        let final_norm = LayerNorm::new(store, "decoder.norm", d);
        Ok(Self {
            cfg: cfg.clone(),
            vocab,
            embed,
            pos,
            blocks,
            final_norm,
        })
    }

    fn dropout<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Var {
        let (Some(rng), p) = (rng.as_mut(), self.cfg.dropout) else {
            return x;
        };
        if p <= 0.0 {
            return x;
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask = Array2::from_shape_fn(tape.shape(x), |_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        });
        let mask = tape.input(mask);
        tape.mul(x, mask)
    }

    /// Runs the decoder. `train_rng` enables dropout.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        seq: &TokenSequence<RowRef>,
        mut train_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<DecoderOutput> {
        let len = seq.len();
        if len == 0 {
            return Err(Error::Shape("empty token sequence".into()));
        }
        if len > self.cfg.max_len {
            return Err(Error::SequenceTooLong {
                len,
                max: self.cfg.max_len,
            });
        }
        let table = tape.param(self.embed);
        let rows: Vec<RowRef> = seq
            .slots
            .iter()
            .map(|s| match s {
                Slot::Continuous { token, .. } => *token,
                Slot::Discrete { index, .. } => (table, *index),
            })
            .collect();
        for &(v, _) in &rows {
            let width = tape.shape(v).1;
            if width != self.cfg.d_lm {
                return Err(Error::DimensionMismatch {
                    expected: self.cfg.d_lm,
                    got: width,
                });
            }
        }
        let x = tape.stack_rows(&rows);
        let mut x = match self.pos {
            Some(pos) => {
                let pos = tape.param(pos);
                let pos = tape.slice_rows(pos, 0, len);
                tape.add(x, pos)
            }
            None => x,
        };
        let rotary = (self.cfg.positional == Positional::Rope)
            .then(|| Rotary::new(tape, len, self.cfg.d_lm / self.cfg.heads));
        x = self.dropout(tape, x, &mut train_rng);
        for b in &self.blocks {
            let h = b.ln1.forward(tape, x);
            let a = b.attn.forward_with(tape, h, h, h, true, rotary.as_ref());
            let a = self.dropout(tape, a, &mut train_rng);
            x = tape.add(x, a);
            let h = b.ln2.forward(tape, x);
            let h = b.ff1.forward(tape, h);
            let h = tape.gelu(h);
            let h = b.ff2.forward(tape, h);
            let h = self.dropout(tape, h, &mut train_rng);
            x = tape.add(x, h);
        }
        let hidden = self.final_norm.forward(tape, x);
        let logits = if seq.predict_positions.is_empty() {
            None
        } else {
            let read: Vec<usize> = seq
                .predict_positions
                .iter()
                .map(|&p| {
                    assert!(p >= 1 && p <= len, "predict position {p} outside 1..={len}");
                    p - 1
                })
                .collect();
            let h = tape.gather_rows(hidden, &read);
            let head = tape.slice_rows(table, 0, self.vocab.id_space());
            Some(tape.matmul_t(h, head))
        };
        Ok(DecoderOutput { hidden, logits })
    }

    /// Teacher-forced mean cross-entropy over the sequence's targets.
    pub fn loss<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        seq: &TokenSequence<RowRef>,
        train_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, DecoderOutput)> {
        assert_eq!(seq.predict_positions.len(), seq.target_ids.len());
        let out = self.forward(tape, seq, train_rng)?;
        let logits = out
            .logits
            .ok_or_else(|| Error::Shape("sequence has no predict positions".into()))?;
        let targets: Vec<(usize, usize)> = seq.target_ids.iter().copied().enumerate().collect();
        Ok((tape.cross_entropy(logits, &targets), out))
    }
}

/// Constrained argmax. Returns the best admissible index and its softmax
/// probability within the admissible set; ties go to the smaller index.
pub fn predict_id<T: Scalar>(
    logits: ArrayView1<'_, T>,
    constraint: &BTreeSet<usize>,
) -> (usize, f64) {
    assert!(!constraint.is_empty(), "empty constraint");
    let mut best = None::<(usize, f64)>;
    for &i in constraint {
        let v = logits[i].as_f64();
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    let (idx, max) = best.expect("non-empty constraint");
    let total: f64 = constraint
        .iter()
        .map(|&i| (logits[i].as_f64() - max).exp())
        .sum();
    (idx, 1.0 / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamW;
    use crate::sequence::SlotSource;
    use ndarray::{array, s, Array1};
    use rand::SeedableRng;

    fn src() -> SlotSource {
        SlotSource::Id { frame: 0 }
    }

    fn micro(store: &mut ParamStore<f64>, seed: u64, positional: Positional) -> Decoder {
        let cfg = DecoderConfig {
            layers: 1,
            heads: 1,
            d_lm: 4,
            ff: 8,
            max_len: 16,
            positional,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Decoder::new(store, &cfg, IdVocabulary::new(2), &mut rng).unwrap()
    }

    /// Randomizes every parameter so that tests exercise non-trivial weights.
    fn scramble(store: &mut ParamStore<f64>, seed: u64, std: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let m = store.get_mut(id);
            if name.ends_with("gamma") {
                m.mapv_inplace(|_| 1.0 + rng.random_range(-0.3..0.3));
            } else {
                m.mapv_inplace(|_| rng.random_range(-std..std));
            }
        }
    }

    fn mixed_sequence(
        tape: &mut Tape<'_, f64>,
        inputs: &Array2<f64>,
        ids: &[usize],
    ) -> TokenSequence<RowRef> {
        let v = tape.input(inputs.clone());
        let mut slots = Vec::new();
        let mut predict = Vec::new();
        let mut targets = Vec::new();
        for (r, &id) in ids.iter().enumerate() {
            slots.push(Slot::Continuous {
                token: (v, r),
                source: src(),
            });
            predict.push(slots.len());
            targets.push(id);
            slots.push(Slot::Discrete {
                index: id,
                source: src(),
            });
        }
        TokenSequence {
            slots,
            predict_positions: predict,
            target_ids: targets,
        }
    }

    #[test]
    fn single_slot_logit_shape() {
        let mut store = ParamStore::new();
        let dec = micro(&mut store, 1, Positional::Learned);
        let mut tape = Tape::new(&store);
        let v = tape.input(Array2::ones((1, 4)));
        let seq = TokenSequence {
            slots: vec![Slot::Continuous {
                token: (v, 0),
                source: src(),
            }],
            predict_positions: vec![1],
            target_ids: vec![],
        };
        let out = dec.forward(&mut tape, &seq, None).unwrap();
        assert_eq!(tape.shape(out.logits.unwrap()), (1, 3));
    }

    #[test]
    fn overlong_sequence_is_rejected() {
        let mut store = ParamStore::new();
        let dec = micro(&mut store, 1, Positional::Learned);
        let mut tape = Tape::new(&store);
        let seq = TokenSequence {
            slots: vec![
                Slot::Discrete {
                    index: 0,
                    source: src()
                };
                17
            ],
            predict_positions: vec![],
            target_ids: vec![],
        };
        assert!(matches!(
            dec.forward(&mut tape, &seq, None),
            Err(Error::SequenceTooLong { len: 17, max: 16 })
        ));
    }

    #[test]
    fn causal_prefix_is_unaffected_by_suffix() {
        let cfg = DecoderConfig {
            layers: 2,
            heads: 2,
            d_lm: 8,
            ff: 16,
            max_len: 32,
            ..Default::default()
        };
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dec = Decoder::new(&mut store, &cfg, IdVocabulary::new(5), &mut rng).unwrap();
        scramble(&mut store, 5, 0.5);
        for trial in 0..20 {
            let len = 12;
            let base = Array2::from_shape_fn((len, 8), |_| rng.random_range(-1.0..1.0));
            let p = rng.random_range(1..len);
            let mut perturbed = base.clone();
            perturbed
                .slice_mut(s![p.., ..])
                .mapv_inplace(|_| rng.random_range(-3.0..3.0));
            let run = |x: &Array2<f64>| {
                let mut tape = Tape::new(&store);
                let v = tape.input(x.clone());
                let seq = TokenSequence {
                    slots: (0..len)
                        .map(|r| Slot::Continuous {
                            token: (v, r),
                            source: src(),
                        })
                        .collect(),
                    predict_positions: (1..=len).collect(),
                    target_ids: vec![],
                };
                let out = dec.forward(&mut tape, &seq, None).unwrap();
                tape.value(out.logits.unwrap()).to_owned()
            };
            let (a, b) = (run(&base), run(&perturbed));
            // logits row k reads position k; rows 0..p see only unchanged slots.
            assert_eq!(
                a.slice(s![..p, ..]),
                b.slice(s![..p, ..]),
                "trial {trial}, p {p}"
            );
        }
    }

    /// Plain-ndarray recomputation of the micro decoder.
    fn oracle_logits(
        store: &ParamStore<f64>,
        x_in: &Array2<f64>,
        positional: Positional,
    ) -> Array2<f64> {
        let p = |n: &str| store.get(store.id(n).unwrap()).clone();
        let ln = |x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>| {
            let mut out = x.clone();
            for (i, row) in x.rows().into_iter().enumerate() {
                let n = row.len() as f64;
                let mean = row.sum() / n;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                for j in 0..row.len() {
                    out[[i, j]] = (row[j] - mean) / (var + 1e-5).sqrt() * g[[0, j]] + b[[0, j]];
                }
            }
            out
        };
        let len = x_in.nrows();
        let mut x = match positional {
            Positional::Learned => x_in + &p("decoder.pos").slice(s![..len, ..]),
            Positional::Rope => x_in.clone(),
        };
        // Pair (j, j+2) of row i turns by i * 10000^(-j/2).
        let rotate = |m: Array2<f64>| {
            if positional == Positional::Learned {
                return m;
            }
            let mut out = m.clone();
            for i in 0..len {
                for j in 0..2 {
                    let a = i as f64 * 10_000f64.powf(-(j as f64) / 2.0);
                    let (c, sn) = (a.cos(), a.sin());
                    out[[i, j]] = m[[i, j]] * c - m[[i, j + 2]] * sn;
                    out[[i, j + 2]] = m[[i, j + 2]] * c + m[[i, j]] * sn;
                }
            }
            out
        };
        let h = ln(
            &x,
            &p("decoder.block0.ln1.gamma"),
            &p("decoder.block0.ln1.beta"),
        );
        let lin =
            |h: &Array2<f64>, n: &str| h.dot(&p(&format!("{n}.weight"))) + &p(&format!("{n}.bias"));
        let q = rotate(lin(&h, "decoder.block0.attn.q"));
        let k = rotate(lin(&h, "decoder.block0.attn.k"));
        let v = lin(&h, "decoder.block0.attn.v");
        let mut att = Array2::<f64>::zeros((len, 4));
        for i in 0..len {
            let scores: Vec<f64> = (0..=i).map(|j| q.row(i).dot(&k.row(j)) / 2.0).collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for (j, s) in scores.iter().enumerate() {
                let w = (s - m).exp() / z;
                for c in 0..4 {
                    att[[i, c]] += w * v[[j, c]];
                }
            }
        }
        x = x + lin(&att, "decoder.block0.attn.out");
        let h = ln(
            &x,
            &p("decoder.block0.ln2.gamma"),
            &p("decoder.block0.ln2.beta"),
        );
        let h = lin(&h, "decoder.block0.ff1").mapv(|u| {
            0.5 * u
                * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (u + 0.044715 * u.powi(3))).tanh())
        });
        x = x + lin(&h, "decoder.block0.ff2");
        let hidden = ln(&x, &p("decoder.norm.gamma"), &p("decoder.norm.beta"));
        hidden.dot(&p("decoder.embed").slice(s![..3, ..]).t())
    }

    #[test]
    fn micro_decoder_matches_matrix_oracle() {
        for positional in [Positional::Learned, Positional::Rope] {
            let mut store = ParamStore::new();
            let dec = micro(&mut store, 2, positional);
            scramble(&mut store, 3, 0.8);
            let x = array![
                [0.5, -0.2, 0.1, 0.9],
                [-1.0, 0.3, 0.7, 0.0],
                [0.2, 0.2, -0.4, 0.6]
            ];
            let mut tape = Tape::new(&store);
            let v = tape.input(x.clone());
            let seq = TokenSequence {
                slots: vec![
                    Slot::Continuous {
                        token: (v, 0),
                        source: src(),
                    },
                    Slot::Discrete {
                        index: 2,
                        source: src(),
                    },
                    Slot::Continuous {
                        token: (v, 2),
                        source: src(),
                    },
                ],
                predict_positions: vec![1, 2, 3],
                target_ids: vec![],
            };
            let out = dec.forward(&mut tape, &seq, None).unwrap();
            let embed = store.get(dec.embed);
            let mut inputs = x.clone();
            inputs.row_mut(1).assign(&embed.row(2));
            let expected = oracle_logits(&store, &inputs, positional);
            let got = tape.value(out.logits.unwrap());
            for (a, b) in got.iter().zip(expected.iter()) {
                assert!((a - b).abs() < 1e-5, "{positional:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn micro_decoder_gradients_match_finite_differences() {
        for positional in [Positional::Learned, Positional::Rope] {
            let mut store = ParamStore::new();
            let dec = micro(&mut store, 6, positional);
            scramble(&mut store, 7, 0.6);
            let x = array![[0.5, -0.2, 0.1, 0.9], [-1.0, 0.3, 0.7, 0.0]];
            let loss_of = |store: &ParamStore<f64>| {
                let mut tape = Tape::new(store);
                let seq = mixed_sequence(&mut tape, &x, &[2, 0]);
                let (l, _) = dec.loss(&mut tape, &seq, None).unwrap();
                (tape.scalar(l), tape.backward(l).into_params())
            };
            let (_, grads) = loss_of(&store);
            let h = 1e-6;
            let ids: Vec<_> = store.ids().collect();
            let mut checked = 0;
            for id in ids {
                let analytic = grads
                    .get(id)
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(store.get(id).dim()));
                for idx in 0..store.get(id).len() {
                    let (r, c) = (idx / store.get(id).ncols(), idx % store.get(id).ncols());
                    let orig = store.get(id)[[r, c]];
                    store.get_mut(id)[[r, c]] = orig + h;
                    let up = loss_of(&store).0;
                    store.get_mut(id)[[r, c]] = orig - h;
                    let down = loss_of(&store).0;
                    store.get_mut(id)[[r, c]] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let a = analytic[[r, c]];
                    let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
                    assert!(
                        err <= 1e-3,
                        "{positional:?} {} [{r},{c}]: analytic {a}, numeric {numeric}",
                        store.name(id)
                    );
                    checked += 1;
                }
            }
            assert!(checked > 100);
        }
    }

    #[test]
    fn tied_head_shares_the_embedding_parameter() {
        let mut store = ParamStore::new();
        let dec = micro(&mut store, 8, Positional::Learned);
        assert!(store.iter().all(|(_, name, _)| !name.contains("head")));
        let x = array![[0.5, -0.2, 0.1, 0.9]];
        let logit0 = |store: &ParamStore<f64>| {
            let mut tape = Tape::new(store);
            let seq = mixed_sequence(&mut tape, &x, &[1]);
            let out = dec.forward(&mut tape, &seq, None).unwrap();
            tape.value(out.logits.unwrap())[[0, 1]]
        };
        let before = logit0(&store);
        store
            .get_mut(dec.embed)
            .row_mut(1)
            .mapv_inplace(|v| v + 1.0);
        assert_ne!(before, logit0(&store));
    }

    #[test]
    fn predict_id_constraints() {
        let logits = Array1::from(vec![5.0, 1.0, -2.0]);
        let only_new: BTreeSet<usize> = [2].into();
        assert_eq!(predict_id(logits.view(), &only_new), (2, 1.0));
        let admissible: BTreeSet<usize> = [1, 2].into();
        assert_eq!(predict_id(logits.view(), &admissible).0, 1);
        let uniform = Array1::from(vec![0.3f32; 6]);
        let m: BTreeSet<usize> = [0, 2, 4, 5].into();
        let (_, conf) = predict_id(uniform.view(), &m);
        assert!((conf - 0.25).abs() < 1e-12);
    }

    #[test]
    fn overfits_a_fixed_clip() {
        let cfg = DecoderConfig {
            layers: 2,
            heads: 2,
            d_lm: 16,
            ff: 32,
            max_len: 32,
            ..Default::default()
        };
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vocab = IdVocabulary::new(4);
        let dec = Decoder::new(&mut store, &cfg, vocab, &mut rng).unwrap();
        // Two frames, three objects: frame 1 all <new>, frame 2 concrete IDs.
        let objs = Array2::from_shape_fn((6, 16), |_| rng.random_range(-1.0..1.0));
        let mut opt = AdamW::new(&store, 0.0);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let mut tape = Tape::new(&store);
            let v = tape.input(objs.clone());
            let mut slots = Vec::new();
            for (r, id) in [(0, 2), (1, 0), (2, 3)] {
                slots.push(Slot::Continuous {
                    token: (v, r),
                    source: src(),
                });
                slots.push(Slot::Discrete {
                    index: id,
                    source: src(),
                });
            }
            let mut predict = Vec::new();
            let mut targets = Vec::new();
            for (r, id) in [(3, 0), (4, 3), (5, 2)] {
                slots.push(Slot::Continuous {
                    token: (v, r),
                    source: src(),
                });
                predict.push(slots.len());
                targets.push(id);
                slots.push(Slot::Discrete {
                    index: id,
                    source: src(),
                });
            }
            let seq = TokenSequence {
                slots,
                predict_positions: predict,
                target_ids: targets,
            };
            let (l, _) = dec.loss(&mut tape, &seq, None).unwrap();
            last = tape.scalar(l);
            let g = tape.backward(l).into_params();
            opt.step(&mut store, &g, 3e-3);
        }
        assert!(last < 0.01, "final CE {last}");
    }
}
