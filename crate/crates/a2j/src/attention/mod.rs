//! Anchor refinement: the feature enhancement encoder and the anchor
//! interaction decoder, both built on multi-scale deformable attention with a
//! dense-attention fallback for the ablation toggle.

pub mod dense;
pub mod msdam;

pub use dense::MhaParams;
pub use msdam::{flatten_levels, gather_at_points, MsdamConfig, MsdamParams};

use crate::backbone::Pyramid;
use crate::diffmath::{rf, NdArray, ParamId, ParamStore, Real, Tape, Var};
use crate::encoding::pe_rows;
use crate::error::Result;
use crate::init::xavier2d;
use rand_chacha::ChaCha8Rng;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub heads: usize,
    pub points: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    /// Deformable attention when true; plain dense attention otherwise.
    pub use_msdam: bool,
    /// Norm placement inside sublayers; post-norm by default.
    pub pre_norm: bool,
}

impl AttentionConfig {
    pub fn desk(d_model: usize) -> Self {
        AttentionConfig {
            d_model,
            heads: 2,
            points: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_dim: 2 * d_model,
            use_msdam: true,
            pre_norm: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct NormParams {
    gamma: ParamId,
    beta: ParamId,
}

impl NormParams {
    fn init<R: Real>(store: &mut ParamStore<R>, name: &str, d: usize) -> Result<Self> {
        Ok(NormParams {
            gamma: store.register(format!("{name}.gamma"), NdArray::full(&[d], R::one()))?,
            beta: store.register(format!("{name}.beta"), NdArray::zeros(&[d]))?,
        })
    }

    fn forward<R: Real>(&self, tape: &mut Tape<R>, store: &ParamStore<R>, x: Var) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        tape.layer_norm(x, gamma, beta, rf(LN_EPS))
    }
}

#[derive(Debug, Clone, Copy)]
struct FfnParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl FfnParams {
    fn init<R: Real>(
        store: &mut ParamStore<R>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(FfnParams {
            w1: store.register(format!("{name}.w1"), xavier2d(rng, d, hidden))?,
            b1: store.register(format!("{name}.b1"), NdArray::zeros(&[hidden]))?,
            w2: store.register(format!("{name}.w2"), xavier2d(rng, hidden, d))?,
            b2: store.register(format!("{name}.b2"), NdArray::zeros(&[d]))?,
        })
    }

    fn forward<R: Real>(&self, tape: &mut Tape<R>, store: &ParamStore<R>, x: Var) -> Result<Var> {
        let layers = [
            (tape.param(store, self.w1), tape.param(store, self.b1)),
            (tape.param(store, self.w2), tape.param(store, self.b2)),
        ];
        tape.mlp(x, &layers)
    }
}

/// Either attention flavor behind one interface.
pub enum AttnParams {
    Msdam(MsdamParams),
    Dense(MhaParams),
}

impl AttnParams {
    pub fn as_msdam(&self) -> Option<&MsdamParams> {
        match self {
            AttnParams::Msdam(p) => Some(p),
            AttnParams::Dense(_) => None,
        }
    }

    pub fn as_dense(&self) -> Option<&MhaParams> {
        match self {
            AttnParams::Dense(p) => Some(p),
            AttnParams::Msdam(_) => None,
        }
    }
}

pub struct EncoderLayerParams {
    attn: AttnParams,
    norm1: NormParams,
    ffn: FfnParams,
    norm2: NormParams,
}

/// Flattened, position-annotated token state produced by the encoder.
pub struct EncoderState {
    /// `[N_tok, d]` level-major, row-major tokens.
    pub tokens: Var,
    pub level_shapes: Vec<(usize, usize)>,
    pub level_offsets: Vec<usize>,
    /// Each token's own normalized `(x, y)`, the reference for sampling.
    pub ref_points: NdArray<f64>,
    /// Positional term `P_xy` + level embedding, `[N_tok, d]`.
    pub pos: Var,
}

pub struct EncoderParams {
    layers: Vec<EncoderLayerParams>,
    level_embed: ParamId,
    cfg: AttentionConfig,
}

impl EncoderParams {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        rng: &mut ChaCha8Rng,
        cfg: &AttentionConfig,
        num_levels: usize,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(cfg.encoder_layers);
        for i in 0..cfg.encoder_layers {
            let name = format!("encoder.layer{i}");
            let attn = if cfg.use_msdam {
                AttnParams::Msdam(MsdamParams::init(
                    store,
                    rng,
                    &format!("{name}.msdam"),
                    MsdamConfig {
                        d_model: cfg.d_model,
                        heads: cfg.heads,
                        points: cfg.points,
                        levels: num_levels,
                    },
                )?)
            } else {
                AttnParams::Dense(MhaParams::init(
                    store,
                    rng,
                    &format!("{name}.attn"),
                    cfg.d_model,
                    cfg.heads,
                )?)
            };
            layers.push(EncoderLayerParams {
                attn,
                norm1: NormParams::init(store, &format!("{name}.norm1"), cfg.d_model)?,
                ffn: FfnParams::init(store, rng, &format!("{name}.ffn"), cfg.d_model, cfg.ffn_dim)?,
                norm2: NormParams::init(store, &format!("{name}.norm2"), cfg.d_model)?,
            });
        }
        let level_embed = store.register(
            "encoder.level_embed",
            xavier2d(rng, num_levels, cfg.d_model),
        )?;
        Ok(EncoderParams {
            layers,
            level_embed,
            cfg: cfg.clone(),
        })
    }

    pub fn layer_attns(&self) -> impl Iterator<Item = &AttnParams> {
        self.layers.iter().map(|l| &l.attn)
    }

    /// Run the feature enhancement module over a pyramid. With zero layers
    /// the output tokens are exactly the flattened input.
    pub fn forward<R: Real>(
        &self,
        tape: &mut Tape<R>,
        store: &ParamStore<R>,
        pyramid: &Pyramid,
    ) -> Result<EncoderState> {
        let d = self.cfg.d_model;
        let (mut tokens, level_offsets) = flatten_levels(tape, &pyramid.levels)?;
        let level_shapes = pyramid.shapes.clone();

        // token positions: own cell center, normalized per level
        let mut positions: Vec<Vec<R>> = Vec::new();
        let mut refs: Vec<f64> = Vec::new();
        for &(h, w) in &level_shapes {
            for iy in 0..h {
                for ix in 0..w {
                    let x = (ix as f64 + 0.5) / w as f64;
                    let y = (iy as f64 + 0.5) / h as f64;
                    positions.push(vec![rf(x), rf(y)]);
                    refs.push(x);
                    refs.push(y);
                }
            }
        }
        let n_tok = positions.len();
        let ref_points = NdArray::from_vec(&[n_tok, 2], refs)?;
        let pe = pe_rows(&positions, d)?;

        // positional term: sinusoidal PE plus per-level embedding
        let mut pos_rows = Vec::with_capacity(level_shapes.len());
        let level_embed = tape.param(store, self.level_embed);
        for (li, &(h, w)) in level_shapes.iter().enumerate() {
            let pe_l = NdArray::from_vec(
                &[h * w, d],
                pe.data()[level_offsets[li] * d..(level_offsets[li] + h * w) * d].to_vec(),
            )?;
            let pe_l = tape.constant(pe_l);
            let emb = tape.narrow(level_embed, 0, li, 1)?;
            let emb = tape.reshape(emb, &[d])?;
            pos_rows.push(tape.add_row(pe_l, emb)?);
        }
        let pos = tape.concat0(&pos_rows)?;

        let ref_points_r = NdArray::<R>::from_f64(&ref_points);
        for layer in &self.layers {
            tokens = encoder_layer(
                tape,
                store,
                layer,
                tokens,
                pos,
                &ref_points_r,
                &level_shapes,
                &level_offsets,
                self.cfg.pre_norm,
            )?;
        }
        Ok(EncoderState {
            tokens,
            level_shapes,
            level_offsets,
            ref_points,
            pos,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn encoder_layer<R: Real>(
    tape: &mut Tape<R>,
    store: &ParamStore<R>,
    layer: &EncoderLayerParams,
    tokens: Var,
    pos: Var,
    ref_points: &NdArray<R>,
    level_shapes: &[(usize, usize)],
    level_offsets: &[usize],
    pre_norm: bool,
) -> Result<Var> {
    let attn_in = if pre_norm {
        layer.norm1.forward(tape, store, tokens)?
    } else {
        tokens
    };
    let q = tape.add(attn_in, pos)?;
    let attn_out = match &layer.attn {
        AttnParams::Msdam(p) => p.forward(
            tape,
            store,
            q,
            ref_points,
            attn_in,
            level_shapes,
            level_offsets,
        )?,
        AttnParams::Dense(p) => p.forward(tape, store, q, q, attn_in)?,
    };
    let mut tokens = tape.add(tokens, attn_out)?;
    if !pre_norm {
        tokens = layer.norm1.forward(tape, store, tokens)?;
    }

    let ffn_in = if pre_norm {
        layer.norm2.forward(tape, store, tokens)?
    } else {
        tokens
    };
    let ffn_out = layer.ffn.forward(tape, store, ffn_in)?;
    let mut tokens = tape.add(tokens, ffn_out)?;
    if !pre_norm {
        tokens = layer.norm2.forward(tape, store, tokens)?;
    }
    Ok(tokens)
}

pub struct DecoderLayerParams {
    self_attn: MhaParams,
    norm1: NormParams,
    cross: AttnParams,
    norm2: NormParams,
    ffn: FfnParams,
    norm3: NormParams,
}

pub struct DecoderParams {
    layers: Vec<DecoderLayerParams>,
    cfg: AttentionConfig,
}

impl DecoderParams {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        rng: &mut ChaCha8Rng,
        cfg: &AttentionConfig,
        num_levels: usize,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(cfg.decoder_layers);
        for i in 0..cfg.decoder_layers {
            let name = format!("decoder.layer{i}");
            let cross = if cfg.use_msdam {
                AttnParams::Msdam(MsdamParams::init(
                    store,
                    rng,
                    &format!("{name}.cross"),
                    MsdamConfig {
                        d_model: cfg.d_model,
                        heads: cfg.heads,
                        points: cfg.points,
                        levels: num_levels,
                    },
                )?)
            } else {
                AttnParams::Dense(MhaParams::init(
                    store,
                    rng,
                    &format!("{name}.cross"),
                    cfg.d_model,
                    cfg.heads,
                )?)
            };
            layers.push(DecoderLayerParams {
                self_attn: MhaParams::init(
                    store,
                    rng,
                    &format!("{name}.self"),
                    cfg.d_model,
                    cfg.heads,
                )?,
                norm1: NormParams::init(store, &format!("{name}.norm1"), cfg.d_model)?,
                cross,
                norm2: NormParams::init(store, &format!("{name}.norm2"), cfg.d_model)?,
                ffn: FfnParams::init(store, rng, &format!("{name}.ffn"), cfg.d_model, cfg.ffn_dim)?,
                norm3: NormParams::init(store, &format!("{name}.norm3"), cfg.d_model)?,
            });
        }
        Ok(DecoderParams {
            layers,
            cfg: cfg.clone(),
        })
    }

    pub fn layer_attns(&self) -> impl Iterator<Item = (&MhaParams, &AttnParams)> {
        self.layers.iter().map(|l| (&l.self_attn, &l.cross))
    }

    /// Run the anchor interaction module. `embeddings` is the layer-one
    /// decoder input (encoder content gathered at the anchors); `pos_q` is
    /// the shared per-anchor spatial encoding; `anchor_ref [A,2]` holds each
    /// anchor's normalized in-plane position.
    pub fn forward<R: Real>(
        &self,
        tape: &mut Tape<R>,
        store: &ParamStore<R>,
        embeddings: Var,
        pos_q: Var,
        anchor_ref: &NdArray<R>,
        encoder: &EncoderState,
    ) -> Result<Var> {
        let mut d = embeddings;
        for layer in &self.layers {
            d = self.decoder_layer(tape, store, layer, d, pos_q, anchor_ref, encoder)?;
        }
        Ok(d)
    }

    fn decoder_layer<R: Real>(
        &self,
        tape: &mut Tape<R>,
        store: &ParamStore<R>,
        layer: &DecoderLayerParams,
        d: Var,
        pos_q: Var,
        anchor_ref: &NdArray<R>,
        encoder: &EncoderState,
    ) -> Result<Var> {
        let pre_norm = self.cfg.pre_norm;

        // self-attention over anchors: Q = K = D + P_q, V = D
        let sa_in = if pre_norm {
            layer.norm1.forward(tape, store, d)?
        } else {
            d
        };
        let qk = tape.add(sa_in, pos_q)?;
        let sa_out = layer.self_attn.forward(tape, store, qk, qk, sa_in)?;
        let mut d = tape.add(d, sa_out)?;
        if !pre_norm {
            d = layer.norm1.forward(tape, store, d)?;
        }

        // cross-attention into the encoder output: Q = D + P_q, reference
        // points are the anchors themselves, V = E
        let ca_in = if pre_norm {
            layer.norm2.forward(tape, store, d)?
        } else {
            d
        };
        let q = tape.add(ca_in, pos_q)?;
        let ca_out = match &layer.cross {
            AttnParams::Msdam(p) => p.forward(
                tape,
                store,
                q,
                anchor_ref,
                encoder.tokens,
                &encoder.level_shapes,
                &encoder.level_offsets,
            )?,
            AttnParams::Dense(p) => {
                let keys = tape.add(encoder.tokens, encoder.pos)?;
                p.forward(tape, store, q, keys, encoder.tokens)?
            }
        };
        let mut d = tape.add(d, ca_out)?;
        if !pre_norm {
            d = layer.norm2.forward(tape, store, d)?;
        }

        let ffn_in = if pre_norm {
            layer.norm3.forward(tape, store, d)?
        } else {
            d
        };
        let ffn_out = layer.ffn.forward(tape, store, ffn_in)?;
        let mut d = tape.add(d, ffn_out)?;
        if !pre_norm {
            d = layer.norm3.forward(tape, store, d)?;
        }
        Ok(d)
    }
}
