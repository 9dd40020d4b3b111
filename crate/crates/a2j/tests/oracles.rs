//! Cross-checks of the differentiable attention and fusion implementations
//! against independent straight-line oracles.

mod common;

use a2j::attention::{
    AttentionConfig, DecoderParams, EncoderParams, EncoderState, MhaParams, MsdamConfig,
    MsdamParams,
};
use a2j::backbone::Pyramid;
use a2j::diffmath::{pure, NdArray, ParamStore, Tape};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn msdam_matches_bruteforce_oracle_on_random_configs() {
    let worst = msdam_oracle_trials(50, 424242);
    assert!(worst < 1e-5, "worst deviation {worst}");
}

#[test]
fn fusion_matches_scalar_oracle_on_random_instances() {
    let (worst, weight_sum_dev) = fusion_oracle_trials(100, 777);
    assert!(worst < 1e-6, "worst deviation {worst}");
    assert!(weight_sum_dev < 1e-6, "weight sums off by {weight_sum_dev}");
}

fn msdam_fixture(
    d: usize,
    heads: usize,
    points: usize,
    level_shapes: &[(usize, usize)],
    seed: u64,
) -> (ParamStore<f64>, MsdamParams, Vec<usize>, usize) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = MsdamParams::init(
        &mut store,
        &mut rng,
        "att",
        MsdamConfig {
            d_model: d,
            heads,
            points,
            levels: level_shapes.len(),
        },
    )
    .unwrap();
    let mut offsets = Vec::new();
    let mut n_tok = 0;
    for &(h, w) in level_shapes {
        offsets.push(n_tok);
        n_tok += h * w;
    }
    (store, params, offsets, n_tok)
}

#[test]
fn msdam_uniform_attention_degenerate_case() {
    // offsets and attention zeroed, identity value projection: the output is
    // the output-projection of the uniform average of bilinear samples at
    // the reference points
    let shapes = [(3usize, 3usize), (2, 2)];
    let (mut store, params, level_offsets, n_tok) = msdam_fixture(4, 2, 2, &shapes, 5);
    params.zero_offsets_and_attention(&mut store);
    params.identity_value_projection(&mut store);

    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let tokens = NdArray::from_fn(&[n_tok, 4], |_| rng.random::<f64>() - 0.5);
    let queries = NdArray::from_fn(&[3, 4], |_| rng.random::<f64>());
    let reference = NdArray::from_fn(&[3, 2], |_| rng.random::<f64>() * 0.6 + 0.2);

    let mut tape = Tape::new();
    let q = tape.constant(queries);
    let t = tape.constant(tokens.clone());
    let out = params
        .forward(&mut tape, &store, q, &reference, t, &shapes, &level_offsets)
        .unwrap();
    let got = tape.value(out).clone();

    // expected: mean over levels and points of raw-token bilinear samples
    let mut averaged = NdArray::zeros(&[3, 4]);
    for qi in 0..3 {
        for c in 0..4 {
            let mut acc = 0.0;
            for (l, &(h, w)) in shapes.iter().enumerate() {
                acc += oracle_bilinear_token(
                    &tokens,
                    level_offsets[l],
                    h,
                    w,
                    c,
                    reference.at2(qi, 0),
                    reference.at2(qi, 1),
                );
            }
            // uniform over levels x points collapses to a mean over levels
            averaged.set2(qi, c, acc / shapes.len() as f64);
        }
    }
    let out_w = value(&store, "att.out.w");
    let out_b = value(&store, "att.out.b");
    let want = oracle_linear(&averaged, &out_w, &out_b);
    let diff = max_abs_diff(got.data(), want.data());
    assert!(diff < 1e-6, "deviation {diff}");
}

#[test]
fn msdam_single_point_single_head_is_projected_bilinear_sample() {
    let shapes = [(3usize, 4usize)];
    let (mut store, params, level_offsets, n_tok) = msdam_fixture(3, 1, 1, &shapes, 6);
    params.zero_offsets_and_attention(&mut store);
    params.identity_value_projection(&mut store);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tokens = NdArray::from_fn(&[n_tok, 3], |_| rng.random::<f64>() * 2.0 - 1.0);
    let reference = NdArray::from_vec(&[2, 2], vec![0.37, 0.61, 0.83, 0.12]).unwrap();
    let queries = NdArray::from_fn(&[2, 3], |_| rng.random::<f64>());

    let mut tape = Tape::new();
    let q = tape.constant(queries);
    let t = tape.constant(tokens.clone());
    let out = params
        .forward(&mut tape, &store, q, &reference, t, &shapes, &level_offsets)
        .unwrap();
    let got = tape.value(out).clone();

    let mut sampled = NdArray::zeros(&[2, 3]);
    for qi in 0..2 {
        for c in 0..3 {
            sampled.set2(
                qi,
                c,
                oracle_bilinear_token(
                    &tokens,
                    0,
                    3,
                    4,
                    c,
                    reference.at2(qi, 0),
                    reference.at2(qi, 1),
                ),
            );
        }
    }
    let want = oracle_linear(&sampled, &value(&store, "att.out.w"), &value(&store, "att.out.b"));
    assert!(max_abs_diff(got.data(), want.data()) < 1e-9);
}

#[test]
fn msdam_attention_weights_sum_to_one_across_levels_and_points() {
    // with identity value projection and constant-one tokens, the weighted
    // sum of in-bounds samples is exactly one per head channel before the
    // output projection; probe that through a zero output bias and identity
    // output projection
    let shapes = [(2usize, 2usize), (3, 3)];
    let (mut store, params, level_offsets, n_tok) = msdam_fixture(4, 2, 2, &shapes, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    randomize_store(&mut store, &mut rng, 0.7);
    params.identity_value_projection(&mut store);
    let id = store.lookup("att.out.w").unwrap();
    let d = 4;
    *store.value_mut(id) =
        NdArray::from_fn(&[d, d], |i| if i / d == i % d { 1.0 } else { 0.0 });
    let ob = store.lookup("att.out.b").unwrap();
    store.value_mut(ob).data_mut().fill(0.0);
    // keep sampling strictly interior so no mass falls off the border
    let off = store.lookup("att.offset.w").unwrap();
    store.value_mut(off).data_mut().fill(0.0);
    let offb = store.lookup("att.offset.b").unwrap();
    store.value_mut(offb).data_mut().fill(0.0);

    let tokens = NdArray::full(&[n_tok, 4], 1.0);
    let queries = NdArray::from_fn(&[4, 4], |_| rng.random::<f64>() - 0.5);
    let reference = NdArray::from_fn(&[4, 2], |_| rng.random::<f64>() * 0.3 + 0.35);
    let mut tape = Tape::new();
    let q = tape.constant(queries);
    let t = tape.constant(tokens);
    let out = params
        .forward(&mut tape, &store, q, &reference, t, &shapes, &level_offsets)
        .unwrap();
    for &v in tape.value(out).data() {
        assert!((v - 1.0).abs() < 1e-6, "attention mass {v}");
    }
}

fn pyramid_fixture(
    tape: &mut Tape<f64>,
    d: usize,
    shapes: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Pyramid {
    let levels = shapes
        .iter()
        .map(|&(h, w)| tape.constant(NdArray::from_fn(&[d, h, w], |_| rng.random::<f64>() - 0.5)))
        .collect();
    Pyramid {
        levels,
        shapes: shapes.to_vec(),
    }
}

#[test]
fn encoder_with_zero_layers_is_the_flattened_input() {
    let d = 8;
    let shapes = [(2usize, 2usize), (1, 1), (1, 1), (1, 1)];
    let cfg = AttentionConfig {
        d_model: d,
        heads: 2,
        points: 2,
        encoder_layers: 0,
        decoder_layers: 0,
        ffn_dim: 8,
        use_msdam: true,
        pre_norm: false,
    };
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let enc = EncoderParams::init(&mut store, &mut rng, &cfg, 4).unwrap();
    let mut tape = Tape::new();
    let pyramid = pyramid_fixture(&mut tape, d, &shapes, &mut rng);
    let raw: Vec<NdArray<f64>> = pyramid
        .levels
        .iter()
        .map(|&v| tape.value(v).clone())
        .collect();
    let state = enc.forward(&mut tape, &store, &pyramid).unwrap();
    let tokens = tape.value(state.tokens);
    assert_eq!(tokens.shape(), &[7, d]);
    // token (level, y, x) row equals channel column of the map
    let mut row = 0;
    for (map, &(h, w)) in raw.iter().zip(&shapes) {
        for yx in 0..h * w {
            for c in 0..d {
                assert_eq!(tokens.at2(row, c), map.at3(c, yx / w, yx % w));
            }
            row += 1;
        }
    }
}

#[test]
fn encoder_layers_preserve_token_shape() {
    let d = 8;
    let shapes = [(2usize, 2usize), (2, 2), (1, 1), (1, 1)];
    let cfg = AttentionConfig {
        d_model: d,
        heads: 2,
        points: 2,
        encoder_layers: 6,
        decoder_layers: 0,
        ffn_dim: 16,
        use_msdam: true,
        pre_norm: false,
    };
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let enc = EncoderParams::init(&mut store, &mut rng, &cfg, 4).unwrap();
    randomize_store(&mut store, &mut rng, 0.4);
    let mut tape = Tape::new();
    let pyramid = pyramid_fixture(&mut tape, d, &shapes, &mut rng);
    let state = enc.forward(&mut tape, &store, &pyramid).unwrap();
    assert_eq!(tape.value(state.tokens).shape(), &[10, d]);
    assert!(tape.value(state.tokens).all_finite());
}

#[test]
fn self_attention_over_a_single_anchor_attends_to_itself() {
    // one query attending over one key: the soft-max weight is exactly 1,
    // so the output is the plain projection chain of the value
    let d = 6;
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mha = MhaParams::init(&mut store, &mut rng, "sa", d, 2).unwrap();
    let q_in = NdArray::from_fn(&[1, d], |_| rng.random::<f64>() - 0.5);
    let mut tape = Tape::new();
    let q = tape.constant(q_in.clone());
    let out = mha.forward(&mut tape, &store, q, q, q).unwrap();
    let p = MhaOracleParams::from_store(&store, "sa");
    let v = oracle_linear(&q_in, &p.wv, &p.bv);
    let want = oracle_linear(&v, &p.wo, &p.bo);
    assert!(max_abs_diff(tape.value(out).data(), want.data()) < 1e-12);
}

struct DecoderFixture {
    store: ParamStore<f64>,
    dec: DecoderParams,
    d0: NdArray<f64>,
    pq: NdArray<f64>,
    anchor_ref: NdArray<f64>,
    tokens: NdArray<f64>,
    pos: NdArray<f64>,
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
}

fn decoder_fixture(d: usize, anchors: usize, seed: u64) -> DecoderFixture {
    let cfg = AttentionConfig {
        d_model: d,
        heads: 2,
        points: 2,
        encoder_layers: 0,
        decoder_layers: 1,
        ffn_dim: 12,
        use_msdam: true,
        pre_norm: false,
    };
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dec = DecoderParams::init(&mut store, &mut rng, &cfg, 2).unwrap();
    randomize_store(&mut store, &mut rng, 0.5);
    let shapes = vec![(2usize, 2usize), (2, 2)];
    let offsets = vec![0usize, 4];
    let n_tok = 8;
    DecoderFixture {
        store,
        dec,
        d0: NdArray::from_fn(&[anchors, d], |_| rng.random::<f64>() - 0.5),
        pq: NdArray::from_fn(&[anchors, d], |_| rng.random::<f64>() - 0.5),
        anchor_ref: NdArray::from_fn(&[anchors, 2], |_| rng.random::<f64>() * 0.8 + 0.1),
        tokens: NdArray::from_fn(&[n_tok, d], |_| rng.random::<f64>() - 0.5),
        pos: NdArray::from_fn(&[n_tok, d], |_| rng.random::<f64>() - 0.5),
        shapes,
        offsets,
    }
}

fn run_decoder(fx: &DecoderFixture) -> NdArray<f64> {
    let mut tape = Tape::new();
    let tokens = tape.constant(fx.tokens.clone());
    let pos = tape.constant(fx.pos.clone());
    let state = EncoderState {
        tokens,
        level_shapes: fx.shapes.clone(),
        level_offsets: fx.offsets.clone(),
        ref_points: NdArray::zeros(&[8, 2]),
        pos,
    };
    let d0 = tape.constant(fx.d0.clone());
    let pq = tape.constant(fx.pq.clone());
    let out = fx
        .dec
        .forward(&mut tape, &fx.store, d0, pq, &fx.anchor_ref, &state)
        .unwrap();
    tape.value(out).clone()
}

fn oracle_decoder_layer(fx: &DecoderFixture, cross_zeroed: bool) -> NdArray<f64> {
    let store = &fx.store;
    let add = |a: &NdArray<f64>, b: &NdArray<f64>| a.zip_map(b, |x, y| x + y).unwrap();
    // self-attention sublayer
    let qk = add(&fx.d0, &fx.pq);
    let sa = oracle_mha(
        &MhaOracleParams::from_store(store, "decoder.layer0.self"),
        &qk,
        &qk,
        &fx.d0,
        2,
    );
    let d1 = oracle_layer_norm(
        &add(&fx.d0, &sa),
        &value(store, "decoder.layer0.norm1.gamma"),
        &value(store, "decoder.layer0.norm1.beta"),
    );
    // cross-attention sublayer
    let ca = if cross_zeroed {
        NdArray::zeros(d1.shape())
    } else {
        oracle_msdam(
            &MsdamOracleParams::from_store(store, "decoder.layer0.cross"),
            &add(&d1, &fx.pq),
            &fx.anchor_ref,
            &fx.tokens,
            &fx.shapes,
            &fx.offsets,
            2,
            2,
        )
    };
    let d2 = oracle_layer_norm(
        &add(&d1, &ca),
        &value(store, "decoder.layer0.norm2.gamma"),
        &value(store, "decoder.layer0.norm2.beta"),
    );
    // feed-forward sublayer
    let h = oracle_relu(&oracle_linear(
        &d2,
        &value(store, "decoder.layer0.ffn.w1"),
        &value(store, "decoder.layer0.ffn.b1"),
    ));
    let ff = oracle_linear(
        &h,
        &value(store, "decoder.layer0.ffn.w2"),
        &value(store, "decoder.layer0.ffn.b2"),
    );
    oracle_layer_norm(
        &add(&d2, &ff),
        &value(store, "decoder.layer0.norm3.gamma"),
        &value(store, "decoder.layer0.norm3.beta"),
    )
}

#[test]
fn decoder_layer_matches_straight_line_oracle() {
    let fx = decoder_fixture(6, 5, 23);
    let got = run_decoder(&fx);
    let want = oracle_decoder_layer(&fx, false);
    let diff = max_abs_diff(got.data(), want.data());
    assert!(diff < 1e-5, "deviation {diff}");
}

#[test]
fn zeroed_cross_projection_reduces_to_self_attention_and_ffn() {
    let mut fx = decoder_fixture(6, 4, 29);
    // zero the cross-attention output projection
    let (out_w, out_b) = {
        let (_, cross) = fx.dec.layer_attns().next().unwrap();
        cross.as_msdam().unwrap().raw_ids()[3]
    };
    fx.store.value_mut(out_w).data_mut().fill(0.0);
    fx.store.value_mut(out_b).data_mut().fill(0.0);
    let got = run_decoder(&fx);
    let want = oracle_decoder_layer(&fx, true);
    let diff = max_abs_diff(got.data(), want.data());
    assert!(diff < 1e-9, "deviation {diff}");
}

#[test]
fn decoder_layer_is_permutation_equivariant_over_anchors() {
    let fx = decoder_fixture(6, 6, 37);
    let base = run_decoder(&fx);
    let perm: Vec<usize> = vec![4, 0, 5, 2, 1, 3];
    let permute_rows = |m: &NdArray<f64>| {
        NdArray::from_fn(m.shape(), |i| {
            let (r, c) = (i / m.dim(1), i % m.dim(1));
            m.at2(perm[r], c)
        })
    };
    let permuted = DecoderFixture {
        d0: permute_rows(&fx.d0),
        pq: permute_rows(&fx.pq),
        anchor_ref: permute_rows(&fx.anchor_ref),
        ..fx
    };
    let got = run_decoder(&permuted);
    for r in 0..6 {
        for c in 0..6 {
            let diff = (got.at2(r, c) - base.at2(perm[r], c)).abs();
            assert!(diff < 1e-9, "row {r} col {c}: {diff}");
        }
    }
}

#[test]
fn pure_primitives_are_bit_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let x = NdArray::from_fn(&[4, 7], |_| rng.random::<f64>() * 4.0 - 2.0);
    let a = pure::softmax(&x, 1).unwrap();
    let b = pure::softmax(&x, 1).unwrap();
    assert_eq!(a.data(), b.data());
    let f = NdArray::from_fn(&[2, 5, 5], |_| rng.random::<f64>());
    let pts = [(0.3, 0.4), (0.9, 0.2)];
    assert_eq!(
        pure::bilinear_sample(&f, &pts).unwrap().data(),
        pure::bilinear_sample(&f, &pts).unwrap().data()
    );
}
