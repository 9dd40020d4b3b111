//! Finite-difference verification of tape gradients.
//!
//! Analytic gradients from one backward pass are compared against central
//! differences of the objective, element by element. Large parameters are
//! subsampled; the report keeps the worst element per parameter.

use super::ndarray::{rf, NdArray, Real};
use super::param::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

pub struct GradCheckConfig {
    /// Base step; the per-element step is `epsilon * max(1, |x|)`.
    pub epsilon: f64,
    /// Cap on checked elements per parameter (`None` checks all).
    pub samples_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-4,
            samples_per_param: Some(16),
            seed: 0x9d5a_b3c1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// Relative error with a unit guard so near-zero gradients compare absolutely.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Nudge every parameter by a small deterministic random amount. Gradient
/// checks must run at a generic point: freshly initialized models can sit
/// exactly on kinks (ReLU zeros, bilinear cell boundaries) where one-sided
/// derivatives disagree with central differences.
pub fn jitter_params<R: Real>(store: &mut ParamStore<R>, scale: f64, seed: u64) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            let noise = rng.random::<f64>() * 2.0 - 1.0;
            *v += rf::<R>(noise * scale) * (R::one() + v.abs());
        }
    }
}

/// Check the analytic gradient of `f` (a scalar objective built on a fresh
/// tape from the store's parameters) against central finite differences.
pub fn grad_check<R, F>(
    store: &mut ParamStore<R>,
    cfg: &GradCheckConfig,
    mut f: F,
) -> Result<GradCheckReport>
where
    R: Real,
    F: FnMut(&mut Tape<R>, &ParamStore<R>) -> Result<Var>,
{
    // analytic pass
    let mut tape = Tape::new();
    let root = f(&mut tape, store)?;
    if !tape.value(root).all_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let grads = tape.backward(root)?;
    let analytic: HashMap<ParamId, NdArray<R>> = tape.param_grads(&grads).into_iter().collect();
    drop(tape);

    let mut eval = |store: &ParamStore<R>| -> Result<f64> {
        let mut tape = Tape::new();
        let root = f(&mut tape, store)?;
        let v = tape.value(root);
        if v.len() != 1 {
            return Err(Error::shapes(v.shape(), &[1]));
        }
        let v = v.item();
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        Ok(v.as_f64())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        params: Vec::new(),
        max_rel_err: 0.0,
    };

    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let mut indices: Vec<usize> = (0..n).collect();
        if let Some(cap) = cfg.samples_per_param {
            if n > cap {
                indices.shuffle(&mut rng);
                indices.truncate(cap);
                indices.sort_unstable();
            }
        }

        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            checked: indices.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for idx in indices {
            let orig = store.value(id).data()[idx];
            let step = rf::<R>(cfg.epsilon) * orig.abs().max(R::one());
            let hi = orig + step;
            let lo = orig - step;
            store.value_mut(id).data_mut()[idx] = hi;
            let fp = eval(store)?;
            store.value_mut(id).data_mut()[idx] = lo;
            let fm = eval(store)?;
            store.value_mut(id).data_mut()[idx] = orig;
            // use the actually-applied step to absorb rounding of x +- eps
            let h = (hi - lo).as_f64();
            let numeric = (fp - fm) / h;
            let a = analytic
                .get(&id)
                .map(|g| g.data()[idx].as_f64())
                .unwrap_or(0.0);
            let e = rel_err(a, numeric);
            if e >= check.max_rel_err {
                check.max_rel_err = e;
                check.worst_index = idx;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.max_rel_err = report.max_rel_err.max(check.max_rel_err);
        report.params.push(check);
    }
    Ok(report)
}
