//! Multi-scale deformable attention: each query predicts a few sampling
//! offsets and attention weights per head and level, gathers value features
//! by bilinear sampling at reference+offset, and combines them by soft-maxed
//! weights across (levels x points).

use crate::diffmath::{rf, NdArray, ParamId, ParamStore, Real, Tape, Var};
use crate::error::Result;
use crate::init::xavier2d;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct MsdamConfig {
    pub d_model: usize,
    pub heads: usize,
    pub points: usize,
    pub levels: usize,
}

impl MsdamConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MsdamParams {
    value_w: ParamId,
    value_b: ParamId,
    offset_w: ParamId,
    offset_b: ParamId,
    attn_w: ParamId,
    attn_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    pub cfg: MsdamConfig,
}

impl MsdamParams {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: MsdamConfig,
    ) -> Result<Self> {
        let d = cfg.d_model;
        let mlk = cfg.heads * cfg.levels * cfg.points;
        // offset weights start at zero with a directional grid bias; attention
        // weights start at zero (uniform after soft-max)
        let offset_bias = directional_grid_bias::<R>(cfg);
        Ok(MsdamParams {
            value_w: store.register(format!("{name}.value.w"), xavier2d(rng, d, d))?,
            value_b: store.register(format!("{name}.value.b"), NdArray::zeros(&[d]))?,
            offset_w: store.register(format!("{name}.offset.w"), NdArray::zeros(&[d, mlk * 2]))?,
            offset_b: store.register(format!("{name}.offset.b"), offset_bias)?,
            attn_w: store.register(format!("{name}.attn.w"), NdArray::zeros(&[d, mlk]))?,
            attn_b: store.register(format!("{name}.attn.b"), NdArray::zeros(&[mlk]))?,
            out_w: store.register(format!("{name}.out.w"), xavier2d(rng, d, d))?,
            out_b: store.register(format!("{name}.out.b"), NdArray::zeros(&[d]))?,
        cfg,
        })
    }

    /// Apply deformable attention.
    ///
    /// * `queries`: `[Nq, d_model]` content+position vectors.
    /// * `reference`: `[Nq, 2]` normalized `(x, y)` per query, used on every
    ///   level; offsets are added in units of level cells.
    /// * `value_tokens`: `[N_tok, d_model]` level-major flattened maps.
    /// * `level_shapes`/`level_offsets`: spatial shape and token row offset
    ///   per level.
    pub fn forward<R: Real>(
        &self,
        tape: &mut Tape<R>,
        store: &ParamStore<R>,
        queries: Var,
        reference: &NdArray<R>,
        value_tokens: Var,
        level_shapes: &[(usize, usize)],
        level_offsets: &[usize],
    ) -> Result<Var> {
        let cfg = self.cfg;
        let (m, l, k) = (cfg.heads, cfg.levels, cfg.points);
        let dh = cfg.head_dim();
        let nq = tape.shape(queries)[0];

        let value_w = tape.param(store, self.value_w);
        let value_b = tape.param(store, self.value_b);
        let values = tape.linear(value_tokens, value_w, value_b)?;

        // per-level value maps [d, H, W]
        let mut maps = Vec::with_capacity(l);
        for (li, &(h, w)) in level_shapes.iter().enumerate() {
            let rows = tape.narrow(values, 0, level_offsets[li], h * w)?;
            let t = tape.transpose2d(rows)?;
            maps.push(tape.reshape(t, &[cfg.d_model, h, w])?);
        }

        let offset_w = tape.param(store, self.offset_w);
        let offset_b = tape.param(store, self.offset_b);
        let offsets = tape.linear(queries, offset_w, offset_b)?;
        let attn_w = tape.param(store, self.attn_w);
        let attn_b = tape.param(store, self.attn_b);
        let logits = tape.linear(queries, attn_w, attn_b)?;

        // reference rows repeated per sampling point
        let mut ref_rep = NdArray::zeros(&[nq * k, 2]);
        for q in 0..nq {
            for p in 0..k {
                ref_rep.set2(q * k + p, 0, reference.at2(q, 0));
                ref_rep.set2(q * k + p, 1, reference.at2(q, 1));
            }
        }
        let ref_rep = tape.constant(ref_rep);

        let mut heads = Vec::with_capacity(m);
        for mi in 0..m {
            let logits_m = tape.narrow(logits, 1, mi * l * k, l * k)?;
            let attn_m = tape.softmax(logits_m, 1)?;
            let mut acc: Option<Var> = None;
            for (li, &(h, w)) in level_shapes.iter().enumerate() {
                // offsets for (head, level): [Nq, K*2] -> [Nq*K, 2], scaled
                // to normalized units of this level
                let off = tape.narrow(offsets, 1, (mi * l + li) * k * 2, k * 2)?;
                let off = tape.reshape(off, &[nq * k, 2])?;
                let inv = tape.constant(
                    NdArray::from_vec(&[2], vec![rf(1.0 / w as f64), rf(1.0 / h as f64)])
                        .expect("pair"),
                );
                let off = tape.mul_row(off, inv)?;
                let points = tape.add(ref_rep, off)?;
                let head_map = tape.narrow(maps[li], 0, mi * dh, dh)?;
                let sampled = tape.bilinear(head_map, points)?; // [dh, Nq*K]
                let wts = tape.narrow(attn_m, 1, li * k, k)?;
                let wts = tape.reshape(wts, &[nq * k])?;
                let weighted = tape.mul_row(sampled, wts)?;
                acc = Some(match acc {
                    None => weighted,
                    Some(a) => tape.add(a, weighted)?,
                });
            }
            // collapse sampling points: [dh, Nq*K] -> [dh*Nq, K] -> [dh, Nq]
            let summed = tape.reshape(acc.expect("levels > 0"), &[dh * nq, k])?;
            let summed = tape.sum_axis(summed, 1)?;
            heads.push(tape.reshape(summed, &[dh, nq])?);
        }
        let stacked = tape.concat0(&heads)?; // [d, Nq]
        let ctx = tape.transpose2d(stacked)?;
        let out_w = tape.param(store, self.out_w);
        let out_b = tape.param(store, self.out_b);
        tape.linear(ctx, out_w, out_b)
    }

    /// Zero the sampling-offset and attention parameters, giving degenerate
    /// uniform attention at the reference points. Test hook.
    pub fn zero_offsets_and_attention<R: Real>(&self, store: &mut ParamStore<R>) {
        for id in [self.offset_w, self.offset_b, self.attn_w, self.attn_b] {
            store.value_mut(id).data_mut().fill(R::zero());
        }
    }

    /// Make the value projection the identity and zero its bias. Test hook.
    pub fn identity_value_projection<R: Real>(&self, store: &mut ParamStore<R>) {
        let d = self.cfg.d_model;
        *store.value_mut(self.value_w) =
            NdArray::from_fn(&[d, d], |i| if i / d == i % d { R::one() } else { R::zero() });
        store.value_mut(self.value_b).data_mut().fill(R::zero());
    }

    /// Raw parameter handles `(value, offset, attn, out)` as `(w, b)` pairs,
    /// used by the independent oracle in tests.
    pub fn raw_ids(&self) -> [(ParamId, ParamId); 4] {
        [
            (self.value_w, self.value_b),
            (self.offset_w, self.offset_b),
            (self.attn_w, self.attn_b),
            (self.out_w, self.out_b),
        ]
    }
}

/// Deformable-attention style bias: one direction per head, magnitude
/// growing with the point index, in units of level cells.
fn directional_grid_bias<R: Real>(cfg: MsdamConfig) -> NdArray<R> {
    let (m, l, k) = (cfg.heads, cfg.levels, cfg.points);
    let mut bias = NdArray::zeros(&[m * l * k * 2]);
    for mi in 0..m {
        let theta = 2.0 * std::f64::consts::PI * mi as f64 / m as f64;
        let (mut dx, mut dy) = (theta.cos(), theta.sin());
        let norm = dx.abs().max(dy.abs()).max(1e-12);
        dx /= norm;
        dy /= norm;
        for li in 0..l {
            for ki in 0..k {
                let base = ((mi * l + li) * k + ki) * 2;
                bias.data_mut()[base] = rf(dx * (ki + 1) as f64);
                bias.data_mut()[base + 1] = rf(dy * (ki + 1) as f64);
            }
        }
    }
    bias
}

pub use helpers::{flatten_levels, gather_at_points};

mod helpers {
    use super::*;

    /// Flatten per-level maps `[d,H,W]` into level-major tokens `[N_tok, d]`;
    /// returns the tokens plus per-level row offsets.
    pub fn flatten_levels<R: Real>(
        tape: &mut Tape<R>,
        levels: &[Var],
    ) -> Result<(Var, Vec<usize>)> {
        let mut rows = Vec::with_capacity(levels.len());
        let mut offsets = Vec::with_capacity(levels.len());
        let mut off = 0;
        for &lv in levels {
            let shape = tape.shape(lv).to_vec();
            let (d, h, w) = (shape[0], shape[1], shape[2]);
            let flat = tape.reshape(lv, &[d, h * w])?;
            let t = tape.transpose2d(flat)?;
            offsets.push(off);
            off += h * w;
            rows.push(t);
        }
        Ok((tape.concat0(&rows)?, offsets))
    }

    /// Average of bilinear samples of every level at the given normalized
    /// points: parameter-free content gathering, `[P, d]`.
    pub fn gather_at_points<R: Real>(
        tape: &mut Tape<R>,
        tokens: Var,
        level_shapes: &[(usize, usize)],
        level_offsets: &[usize],
        points: &NdArray<R>,
    ) -> Result<Var> {
        let d = tape.shape(tokens)[1];
        let pts = tape.constant(points.clone());
        let mut acc: Option<Var> = None;
        for (li, &(h, w)) in level_shapes.iter().enumerate() {
            let rows = tape.narrow(tokens, 0, level_offsets[li], h * w)?;
            let t = tape.transpose2d(rows)?;
            let map = tape.reshape(t, &[d, h, w])?;
            let sampled = tape.bilinear(map, pts)?;
            acc = Some(match acc {
                None => sampled,
                Some(a) => tape.add(a, sampled)?,
            });
        }
        let mean = tape.scale(acc.expect("levels > 0"), rf(1.0 / level_shapes.len() as f64));
        tape.transpose2d(mean)
    }
}
