//! Central finite-difference checks of tape gradients, for tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamStore, Tape, Var};

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter name and element of the worst entry.
    pub worst: String,
}

/// Relative error with a small floor so vanishing gradients compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Reduces `out` to a scalar through fixed random weights, so every output
/// entry contributes a distinct gradient.
pub fn probe_loss(tape: &mut Tape<'_, f64>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Array2::from_shape_fn(tape.shape(out), |_| rng.random_range(-1.0..1.0));
    let w = tape.input(w);
    let prod = tape.mul(out, w);
    tape.sum(prod)
}

/// Compares analytic gradients of every parameter in `store` (optionally only
/// names starting with `prefix`) against central differences of `build`.
pub fn check_params(
    store: &mut ParamStore<f64>,
    prefix: &str,
    h: f64,
    build: impl Fn(&mut Tape<'_, f64>) -> Var,
) -> GradCheck {
    let eval = |store: &ParamStore<f64>| {
        let mut tape = Tape::new(store);
        let l = build(&mut tape);
        tape.scalar(l)
    };
    let grads = {
        let mut tape = Tape::new(store);
        let l = build(&mut tape);
        tape.backward(l).into_params()
    };
    let ids: Vec<_> = store
        .ids()
        .filter(|&id| store.name(id).starts_with(prefix))
        .collect();
    let mut report = GradCheck::default();
    for id in ids {
        let (rows, cols) = store.get(id).dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = store.get(id)[[r, c]];
                store.get_mut(id)[[r, c]] = orig + h;
                let up = eval(store);
                store.get_mut(id)[[r, c]] = orig - h;
                let down = eval(store);
                store.get_mut(id)[[r, c]] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.get(id).map_or(0.0, |g| g[[r, c]]);
                let err = rel_err(analytic, numeric);
                if err > report.max_rel_err || report.checked == 0 {
                    report.max_rel_err = err;
                    report.worst = format!(
                        "{}[{r},{c}] analytic {analytic:.6e} numeric {numeric:.6e}",
                        store.name(id)
                    );
                }
                report.checked += 1;
            }
        }
    }
    report
}
