//! Temporal memory fusion: per-track attention update of the memory token.
//!
//! For each track, the decoder hidden state at the object's slot and the
//! previous memory are summed; the sum is the attention query and key, the
//! current aligned object token is the value. A residual connection and layer
//! normalization produce the new memory.

use rand::Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Init, LayerNorm, MultiHeadAttention};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct TemporalMemoryFusion {
    pub attn: MultiHeadAttention,
    pub norm: LayerNorm,
    pub dim: usize,
}

impl TemporalMemoryFusion {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            attn: MultiHeadAttention::new(store, "tmf.attn", dim, heads, Init::Normal(0.02), rng),
            norm: LayerNorm::new(store, "tmf.norm", dim),
            dim,
        }
    }

    fn check<T: Scalar>(&self, tape: &Tape<'_, T>, v: Var) -> Result<()> {
        let (r, c) = tape.shape(v);
        if r != 1 || c != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: if r == 1 { c } else { r * c },
            });
        }
        Ok(())
    }

    /// Updates one track. All inputs are 1×d. With no history the hidden
    /// state stands in for it.
    pub fn update<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        hidden: Var,
        history: Option<Var>,
        embed: Var,
    ) -> Result<Var> {
        self.check(tape, hidden)?;
        self.check(tape, embed)?;
        let history = match history {
            Some(h) => {
                self.check(tape, h)?;
                h
            }
            None => hidden,
        };
        let fused = tape.add(hidden, history);
        let attended = self.attn.forward(tape, fused, fused, embed, false);
        let residual = tape.add(fused, attended);
        Ok(self.norm.forward(tape, residual))
    }
}
