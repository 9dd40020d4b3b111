//! Independent straight-line oracles for the attention and fusion math.
//! Everything here is scalar loop nests over plain arrays, written without
//! the tape so it can cross-check the differentiable implementations.

#![allow(dead_code)]

use a2j::diffmath::{NdArray, ParamId, ParamStore};

pub fn value(store: &ParamStore<f64>, name: &str) -> NdArray<f64> {
    let id: ParamId = store
        .lookup(name)
        .unwrap_or_else(|| panic!("missing param {name}"));
    store.value(id).clone()
}

/// `x[N,D] * w[D,E] + b[E]` with explicit loops.
pub fn oracle_linear(x: &NdArray<f64>, w: &NdArray<f64>, b: &NdArray<f64>) -> NdArray<f64> {
    let (n, d, e) = (x.dim(0), x.dim(1), w.dim(1));
    let mut out = NdArray::zeros(&[n, e]);
    for i in 0..n {
        for j in 0..e {
            let mut acc = b.data()[j];
            for k in 0..d {
                acc += x.at2(i, k) * w.at2(k, j);
            }
            out.set2(i, j, acc);
        }
    }
    out
}

pub fn oracle_relu(x: &NdArray<f64>) -> NdArray<f64> {
    x.map(|v| v.max(0.0))
}

pub fn oracle_softmax_row(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

pub fn oracle_layer_norm(x: &NdArray<f64>, gamma: &NdArray<f64>, beta: &NdArray<f64>) -> NdArray<f64> {
    let (n, d) = (x.dim(0), x.dim(1));
    let mut out = NdArray::zeros(&[n, d]);
    for i in 0..n {
        let row: Vec<f64> = (0..d).map(|j| x.at2(i, j)).collect();
        let mean: f64 = row.iter().sum::<f64>() / d as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for j in 0..d {
            out.set2(i, j, (row[j] - mean) * inv * gamma.data()[j] + beta.data()[j]);
        }
    }
    out
}

/// Bilinear sample of one channel of a level map stored token-major:
/// `tokens[level_offset + y*w + x][channel]`. Pixel centers at
/// `(i + 0.5) / size`; outside contributions are zero.
pub fn oracle_bilinear_token(
    tokens: &NdArray<f64>,
    level_offset: usize,
    h: usize,
    w: usize,
    channel: usize,
    x: f64,
    y: f64,
) -> f64 {
    let px = x * w as f64 - 0.5;
    let py = y * h as f64 - 0.5;
    let x0 = px.floor() as isize;
    let y0 = py.floor() as isize;
    let fx = px - x0 as f64;
    let fy = py - y0 as f64;
    let mut acc = 0.0;
    for (iy, wy) in [(y0, 1.0 - fy), (y0 + 1, fy)] {
        for (ix, wx) in [(x0, 1.0 - fx), (x0 + 1, fx)] {
            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                continue;
            }
            let token = level_offset + iy as usize * w + ix as usize;
            acc += wy * wx * tokens.at2(token, channel);
        }
    }
    acc
}

pub struct MsdamOracleParams {
    pub value_w: NdArray<f64>,
    pub value_b: NdArray<f64>,
    pub offset_w: NdArray<f64>,
    pub offset_b: NdArray<f64>,
    pub attn_w: NdArray<f64>,
    pub attn_b: NdArray<f64>,
    pub out_w: NdArray<f64>,
    pub out_b: NdArray<f64>,
}

impl MsdamOracleParams {
    /// Read the parameters of a named deformable-attention block.
    pub fn from_store(store: &ParamStore<f64>, prefix: &str) -> Self {
        MsdamOracleParams {
            value_w: value(store, &format!("{prefix}.value.w")),
            value_b: value(store, &format!("{prefix}.value.b")),
            offset_w: value(store, &format!("{prefix}.offset.w")),
            offset_b: value(store, &format!("{prefix}.offset.b")),
            attn_w: value(store, &format!("{prefix}.attn.w")),
            attn_b: value(store, &format!("{prefix}.attn.b")),
            out_w: value(store, &format!("{prefix}.out.w")),
            out_b: value(store, &format!("{prefix}.out.b")),
        }
    }
}

/// Brute-force multi-scale deformable attention: an explicit loop nest over
/// queries, heads, levels and sampling points.
#[allow(clippy::too_many_arguments)]
pub fn oracle_msdam(
    p: &MsdamOracleParams,
    queries: &NdArray<f64>,
    reference: &NdArray<f64>,
    value_tokens: &NdArray<f64>,
    level_shapes: &[(usize, usize)],
    level_offsets: &[usize],
    heads: usize,
    points: usize,
) -> NdArray<f64> {
    let nq = queries.dim(0);
    let d = queries.dim(1);
    let dh = d / heads;
    let levels = level_shapes.len();
    let values = oracle_linear(value_tokens, &p.value_w, &p.value_b);
    let offsets = oracle_linear(queries, &p.offset_w, &p.offset_b);
    let logits = oracle_linear(queries, &p.attn_w, &p.attn_b);
    let mut pre_out = NdArray::zeros(&[nq, d]);
    for q in 0..nq {
        for m in 0..heads {
            let logit_row: Vec<f64> = (0..levels * points)
                .map(|i| logits.at2(q, m * levels * points + i))
                .collect();
            let attn = oracle_softmax_row(&logit_row);
            let mut head_out = vec![0.0; dh];
            for (l, &(h, w)) in level_shapes.iter().enumerate() {
                for k in 0..points {
                    let base = ((m * levels + l) * points + k) * 2;
                    let dx = offsets.at2(q, base) / w as f64;
                    let dy = offsets.at2(q, base + 1) / h as f64;
                    let x = reference.at2(q, 0) + dx;
                    let y = reference.at2(q, 1) + dy;
                    let a = attn[l * points + k];
                    for c in 0..dh {
                        let sampled = oracle_bilinear_token(
                            &values,
                            level_offsets[l],
                            h,
                            w,
                            m * dh + c,
                            x,
                            y,
                        );
                        head_out[c] += a * sampled;
                    }
                }
            }
            for c in 0..dh {
                pre_out.set2(q, m * dh + c, head_out[c]);
            }
        }
    }
    oracle_linear(&pre_out, &p.out_w, &p.out_b)
}

pub struct MhaOracleParams {
    pub wq: NdArray<f64>,
    pub bq: NdArray<f64>,
    pub wk: NdArray<f64>,
    pub bk: NdArray<f64>,
    pub wv: NdArray<f64>,
    pub bv: NdArray<f64>,
    pub wo: NdArray<f64>,
    pub bo: NdArray<f64>,
}

impl MhaOracleParams {
    pub fn from_store(store: &ParamStore<f64>, prefix: &str) -> Self {
        MhaOracleParams {
            wq: value(store, &format!("{prefix}.q.w")),
            bq: value(store, &format!("{prefix}.q.b")),
            wk: value(store, &format!("{prefix}.k.w")),
            bk: value(store, &format!("{prefix}.k.b")),
            wv: value(store, &format!("{prefix}.v.w")),
            bv: value(store, &format!("{prefix}.v.b")),
            wo: value(store, &format!("{prefix}.o.w")),
            bo: value(store, &format!("{prefix}.o.b")),
        }
    }
}

/// Straight-line multi-head attention.
pub fn oracle_mha(
    p: &MhaOracleParams,
    q_in: &NdArray<f64>,
    k_in: &NdArray<f64>,
    v_in: &NdArray<f64>,
    heads: usize,
) -> NdArray<f64> {
    let nq = q_in.dim(0);
    let nk = k_in.dim(0);
    let d = q_in.dim(1);
    let dh = d / heads;
    let q = oracle_linear(q_in, &p.wq, &p.bq);
    let k = oracle_linear(k_in, &p.wk, &p.bk);
    let v = oracle_linear(v_in, &p.wv, &p.bv);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = NdArray::zeros(&[nq, d]);
    for m in 0..heads {
        for qi in 0..nq {
            let scores: Vec<f64> = (0..nk)
                .map(|ki| {
                    let mut s = 0.0;
                    for c in 0..dh {
                        s += q.at2(qi, m * dh + c) * k.at2(ki, m * dh + c);
                    }
                    s * scale
                })
                .collect();
            let attn = oracle_softmax_row(&scores);
            for c in 0..dh {
                let mut acc = 0.0;
                for ki in 0..nk {
                    acc += attn[ki] * v.at2(ki, m * dh + c);
                }
                ctx.set2(qi, m * dh + c, acc);
            }
        }
    }
    oracle_linear(&ctx, &p.wo, &p.bo)
}

/// Scalar loop-nest of the anchor fusion: soft-max over anchors per joint,
/// then the weighted sum of (anchor coordinate + offset).
pub struct FusionOracleOut {
    pub norm_weights: NdArray<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub depth: Vec<f64>,
}

pub fn oracle_fuse(
    anchors: &[(f64, f64, f64)],
    offsets: &NdArray<f64>, // [A, J, 3] as (x, y, depth)
    raw_weights: &NdArray<f64>, // [A, J]
) -> FusionOracleOut {
    let a = anchors.len();
    let j = raw_weights.dim(1);
    let mut norm = NdArray::zeros(&[a, j]);
    for ji in 0..j {
        let col: Vec<f64> = (0..a).map(|ai| raw_weights.at2(ai, ji)).collect();
        let sm = oracle_softmax_row(&col);
        for ai in 0..a {
            norm.set2(ai, ji, sm[ai]);
        }
    }
    let mut x = vec![0.0; j];
    let mut y = vec![0.0; j];
    let mut depth = vec![0.0; j];
    for ji in 0..j {
        for ai in 0..a {
            let w = norm.at2(ai, ji);
            x[ji] += w * (anchors[ai].0 + offsets.at3(ai, ji, 0));
            y[ji] += w * (anchors[ai].1 + offsets.at3(ai, ji, 1));
            depth[ji] += w * (anchors[ai].2 + offsets.at3(ai, ji, 2));
        }
    }
    FusionOracleOut {
        norm_weights: norm,
        x,
        y,
        depth,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn randomize_store(store: &mut ParamStore<f64>, rng: &mut impl rand::Rng, scale: f64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = rng.random::<f64>() * 2.0 * scale - scale;
        }
    }
}

/// Random tiny deformable-attention configs checked against the loop-nest
/// oracle; returns the largest absolute output difference seen.
pub fn msdam_oracle_trials(trials: usize, seed: u64) -> f64 {
    use a2j::attention::{MsdamConfig, MsdamParams};
    use a2j::diffmath::Tape;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let heads = [1, 2][rng.random_range(0..2)];
        let dh = rng.random_range(2..4usize);
        let d = heads * dh;
        let levels = rng.random_range(1..=3usize);
        let points = rng.random_range(1..=3usize);
        let level_shapes: Vec<(usize, usize)> = (0..levels)
            .map(|_| (rng.random_range(1..=4), rng.random_range(1..=4)))
            .collect();
        let mut level_offsets = Vec::new();
        let mut n_tok = 0;
        for &(h, w) in &level_shapes {
            level_offsets.push(n_tok);
            n_tok += h * w;
        }
        let nq = rng.random_range(1..=5usize);

        let mut store = ParamStore::<f64>::new();
        let params = MsdamParams::init(
            &mut store,
            &mut rand_chacha::ChaCha8Rng::seed_from_u64(1),
            "att",
            MsdamConfig {
                d_model: d,
                heads,
                points,
                levels,
            },
        )
        .unwrap();
        randomize_store(&mut store, &mut rng, 0.8);

        let queries = NdArray::from_fn(&[nq, d], |_| rng.random::<f64>() - 0.5);
        let reference = NdArray::from_fn(&[nq, 2], |_| rng.random::<f64>() * 0.8 + 0.1);
        let tokens = NdArray::from_fn(&[n_tok, d], |_| rng.random::<f64>() * 2.0 - 1.0);

        let mut tape = Tape::new();
        let q = tape.constant(queries.clone());
        let t = tape.constant(tokens.clone());
        let out = params
            .forward(&mut tape, &store, q, &reference, t, &level_shapes, &level_offsets)
            .unwrap();
        let got = tape.value(out).clone();

        let oracle_params = MsdamOracleParams::from_store(&store, "att");
        let want = oracle_msdam(
            &oracle_params,
            &queries,
            &reference,
            &tokens,
            &level_shapes,
            &level_offsets,
            heads,
            points,
        );
        worst = worst.max(max_abs_diff(got.data(), want.data()));
    }
    worst
}

/// Random small fusion instances checked against the scalar loop-nest
/// oracle; returns `(max output difference, max weight-sum deviation)`.
pub fn fusion_oracle_trials(trials: usize, seed: u64) -> (f64, f64) {
    use a2j::a2j_head::{fuse, AnchorColumns, OffsetVars};
    use a2j::diffmath::Tape;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst_fuse = 0.0f64;
    let mut worst_sum = 0.0f64;
    for _ in 0..trials {
        let a = rng.random_range(1..=10usize);
        let j = rng.random_range(1..=4usize);
        let anchors: Vec<(f64, f64, f64)> = (0..a)
            .map(|_| {
                (
                    rng.random::<f64>() * 64.0,
                    rng.random::<f64>() * 64.0,
                    rng.random::<f64>() * 200.0 - 100.0,
                )
            })
            .collect();
        let offsets = NdArray::from_fn(&[a, j, 3], |_| rng.random::<f64>() * 20.0 - 10.0);
        let raw = NdArray::from_fn(&[a, j], |_| rng.random::<f64>() * 8.0 - 4.0);

        let mut tape = Tape::new();
        let cols = AnchorColumns {
            x: tape.constant(NdArray::from_fn(&[a], |i| anchors[i].0)),
            y: tape.constant(NdArray::from_fn(&[a], |i| anchors[i].1)),
            depth: tape.constant(NdArray::from_fn(&[a], |i| anchors[i].2)),
            count: a,
        };
        let off_vars = OffsetVars {
            x: tape.constant(NdArray::from_fn(&[a, j], |i| offsets.at3(i / j, i % j, 0))),
            y: tape.constant(NdArray::from_fn(&[a, j], |i| offsets.at3(i / j, i % j, 1))),
            depth: tape.constant(NdArray::from_fn(&[a, j], |i| offsets.at3(i / j, i % j, 2))),
        };
        let raw_var = tape.constant(raw.clone());
        let fused = fuse(&mut tape, &cols, &off_vars, raw_var).unwrap();

        let want = oracle_fuse(&anchors, &offsets, &raw);
        worst_fuse = worst_fuse.max(max_abs_diff(tape.value(fused.x).data(), &want.x));
        worst_fuse = worst_fuse.max(max_abs_diff(tape.value(fused.y).data(), &want.y));
        worst_fuse = worst_fuse.max(max_abs_diff(tape.value(fused.depth).data(), &want.depth));
        let got_w = tape.value(fused.norm_weights);
        worst_fuse = worst_fuse.max(max_abs_diff(got_w.data(), want.norm_weights.data()));
        for ji in 0..j {
            let s: f64 = (0..a).map(|ai| got_w.at2(ai, ji)).sum();
            worst_sum = worst_sum.max((s - 1.0).abs());
        }
    }
    (worst_fuse, worst_sum)
}
