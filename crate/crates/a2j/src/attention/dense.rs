//! Standard multi-head attention: decoder self-attention over anchors, and
//! the dense fallback used when deformable attention is toggled off.

use crate::diffmath::{rf, NdArray, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::init::xavier2d;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct MhaParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    pub heads: usize,
    pub d_model: usize,
}

impl MhaParams {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::config(
                "heads",
                format!("{} must divide d_model {}", heads, d_model),
            ));
        }
        Ok(MhaParams {
            wq: store.register(format!("{name}.q.w"), xavier2d(rng, d_model, d_model))?,
            bq: store.register(format!("{name}.q.b"), NdArray::zeros(&[d_model]))?,
            wk: store.register(format!("{name}.k.w"), xavier2d(rng, d_model, d_model))?,
            bk: store.register(format!("{name}.k.b"), NdArray::zeros(&[d_model]))?,
            wv: store.register(format!("{name}.v.w"), xavier2d(rng, d_model, d_model))?,
            bv: store.register(format!("{name}.v.b"), NdArray::zeros(&[d_model]))?,
            wo: store.register(format!("{name}.o.w"), xavier2d(rng, d_model, d_model))?,
            bo: store.register(format!("{name}.o.b"), NdArray::zeros(&[d_model]))?,
            heads,
            d_model,
        })
    }

    /// Scaled dot-product attention with `q_in [Nq,d]`, `k_in [Nk,d]`,
    /// `v_in [Nk,d]`.
    pub fn forward<R: Real>(
        &self,
        tape: &mut Tape<R>,
        store: &ParamStore<R>,
        q_in: Var,
        k_in: Var,
        v_in: Var,
    ) -> Result<Var> {
        let dh = self.d_model / self.heads;
        let nq = tape.shape(q_in)[0];
        let wq = tape.param(store, self.wq);
        let bq = tape.param(store, self.bq);
        let wk = tape.param(store, self.wk);
        let bk = tape.param(store, self.bk);
        let wv = tape.param(store, self.wv);
        let bv = tape.param(store, self.bv);
        let q = tape.linear(q_in, wq, bq)?;
        let k = tape.linear(k_in, wk, bk)?;
        let v = tape.linear(v_in, wv, bv)?;
        let scale = rf::<R>(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(self.heads);
        for m in 0..self.heads {
            let qm = tape.narrow(q, 1, m * dh, dh)?;
            let km = tape.narrow(k, 1, m * dh, dh)?;
            let vm = tape.narrow(v, 1, m * dh, dh)?;
            let kt = tape.transpose2d(km)?;
            let scores = tape.matmul(qm, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, 1)?;
            let ctx = tape.matmul(attn, vm)?; // [Nq, dh]
            heads.push(tape.transpose2d(ctx)?); // [dh, Nq]
        }
        let stacked = tape.concat0(&heads)?; // [d, Nq]
        let ctx = tape.transpose2d(stacked)?;
        debug_assert_eq!(tape.shape(ctx), &[nq, self.d_model]);
        let wo = tape.param(store, self.wo);
        let bo = tape.param(store, self.bo);
        tape.linear(ctx, wo, bo)
    }

    /// Raw parameter handles `(q, k, v, o)` as `(w, b)` pairs for the
    /// straight-line oracle in tests.
    pub fn raw_ids(&self) -> [(ParamId, ParamId); 4] {
        [
            (self.wq, self.bq),
            (self.wk, self.bk),
            (self.wv, self.bv),
            (self.wo, self.bo),
        ]
    }

    /// Zero the output projection so the sublayer contributes nothing
    /// through its residual. Test hook.
    pub fn zero_output_projection<R: Real>(&self, store: &mut ParamStore<R>) {
        store.value_mut(self.wo).data_mut().fill(R::zero());
        store.value_mut(self.bo).data_mut().fill(R::zero());
    }
}
