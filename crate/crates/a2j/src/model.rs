//! Full network assembly: backbone, anchor refinement (encoder + decoder),
//! offset/weight heads and fusion, with the component toggles used by the
//! ablation harness.

use crate::a2j_head::{
    anchor_columns, fuse, fuse_uniform, offset_branch, weight_branch, AnchorColumns, FusedVars,
    HeadParams, OffsetVars, PredictionBundle,
};
use crate::anchors::{generate_anchor_grid, AnchorSet, JointTarget};
use crate::attention::{
    flatten_levels, gather_at_points, AttentionConfig, DecoderParams, EncoderParams, EncoderState,
};
use crate::backbone::{BackboneConfig, BackboneParams, NUM_LEVELS};
use crate::diffmath::{rf, NdArray, ParamStore, Real, Tape, Var};
use crate::encoding::{anchor_queries, anchor_query_encoding, query_pe_dim, QueryMlpParams};
use crate::error::{Error, Result};
use crate::init::xavier2d;
use crate::losses::{
    anchor_surrounding_loss, joint_estimation_loss, total_loss, JointEstimate, LossConfig,
    LossTargets, LossVars,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Component toggles; all on for the full model. Switching one off
/// reproduces the corresponding ablation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggles {
    /// Off: skip the encoder/decoder; heads see backbone features gathered
    /// at the anchors.
    pub transformer: bool,
    /// Off: one head regresses joints directly from pooled features.
    pub a2j_fusion: bool,
    /// Off: anchor weights are fixed uniform.
    pub learned_weights: bool,
    /// Off: dense attention everywhere instead of deformable.
    pub msdam: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            transformer: true,
            a2j_fusion: true,
            learned_weights: true,
            msdam: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub image_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub points: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    pub anchor_stride: usize,
    pub depth_values: Vec<f64>,
    pub n_joints: usize,
    pub trunk_channels: Vec<usize>,
    pub gn_groups: usize,
    pub projection_convs: usize,
    pub head_hidden: usize,
    pub pre_norm: bool,
    pub toggles: Toggles,
}

impl ModelConfig {
    /// Desk-scale defaults: 64x64 images, width 64, 2+2 layers, a 4x4x3
    /// anchor grid.
    pub fn desk() -> Self {
        ModelConfig {
            image_size: 64,
            d_model: 64,
            heads: 2,
            points: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_dim: 128,
            anchor_stride: 16,
            depth_values: vec![-100.0, 0.0, 100.0],
            n_joints: 42,
            trunk_channels: vec![16, 32, 64, 64, 64],
            gn_groups: 8,
            projection_convs: 1,
            head_hidden: 64,
            pre_norm: false,
            toggles: Toggles::default(),
        }
    }

    /// Paper-faithful sizes (256x256, width 256, 6+6 layers, 16x16x3
    /// anchors). Slow on a desk; provided for completeness.
    pub fn paper() -> Self {
        ModelConfig {
            image_size: 256,
            d_model: 256,
            heads: 8,
            points: 4,
            encoder_layers: 6,
            decoder_layers: 6,
            ffn_dim: 1024,
            anchor_stride: 16,
            depth_values: vec![-100.0, 0.0, 100.0],
            n_joints: 42,
            trunk_channels: vec![64, 128, 256, 256, 256],
            gn_groups: 32,
            projection_convs: 1,
            head_hidden: 256,
            pre_norm: false,
            toggles: Toggles::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.heads != 0 {
            return Err(Error::config(
                "heads",
                format!("{} must divide d_model {}", self.heads, self.d_model),
            ));
        }
        if self.d_model % 4 != 0 {
            return Err(Error::config(
                "d_model",
                "must be divisible by 4 for the in-plane positional encoding",
            ));
        }
        query_pe_dim(self.d_model)?;
        if self.image_size % self.anchor_stride != 0 {
            return Err(Error::config(
                "anchor_stride",
                format!(
                    "{} does not divide image size {}",
                    self.anchor_stride, self.image_size
                ),
            ));
        }
        if self.n_joints == 0 {
            return Err(Error::config("n_joints", "must be positive"));
        }
        Ok(())
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            input_size: self.image_size,
            in_channels: 3,
            trunk_channels: self.trunk_channels.clone(),
            d_model: self.d_model,
            gn_groups: self.gn_groups,
            projection_convs: self.projection_convs,
        }
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            d_model: self.d_model,
            heads: self.heads,
            points: self.points,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            ffn_dim: self.ffn_dim,
            use_msdam: self.toggles.msdam,
            pre_norm: self.pre_norm,
        }
    }
}

/// Prediction vars for one sample, still on the tape.
pub struct ModelOutput {
    pub joints: JointEstimate,
    /// Present on the fusion path.
    pub head: Option<FusionHead>,
}

/// Stage intermediates exposed for gradient verification.
pub struct ForwardTrace {
    pub pyramid_levels: Vec<Var>,
    pub encoder_tokens: Option<Var>,
    pub decoder_out: Var,
    pub output: ModelOutput,
}

pub struct FusionHead {
    pub offsets: OffsetVars,
    /// `None` when learned weights are toggled off.
    pub raw_weights: Option<Var>,
    pub fused: FusedVars,
    pub anchors: AnchorColumns,
}

impl ModelOutput {
    /// Predicted joints `(x, y, depth)` as plain f64 triples.
    pub fn predicted_joints<R: Real>(&self, tape: &Tape<R>) -> Vec<(f64, f64, f64)> {
        let x = tape.value(self.joints.x).to_f64();
        let y = tape.value(self.joints.y).to_f64();
        let d = tape.value(self.joints.depth).to_f64();
        (0..x.len())
            .map(|j| (x.data()[j], y.data()[j], d.data()[j]))
            .collect()
    }

    /// Full per-anchor bundle; `None` on the direct-regression path.
    pub fn bundle<R: Real>(&self, tape: &Tape<R>) -> Option<PredictionBundle> {
        let head = self.head.as_ref()?;
        let raw = head.raw_weights.unwrap_or(head.fused.norm_weights);
        Some(PredictionBundle::from_tape(
            tape,
            &head.offsets,
            raw,
            &head.fused,
        ))
    }
}

pub struct A2jModel {
    pub cfg: ModelConfig,
    pub anchors: AnchorSet,
    anchor_ref: NdArray<f64>,
    backbone: BackboneParams,
    encoder: Option<EncoderParams>,
    decoder: Option<DecoderParams>,
    query_mlp: Option<QueryMlpParams>,
    offset_head: Option<HeadParams>,
    weight_head: Option<HeadParams>,
    direct_head: Option<HeadParams>,
}

impl A2jModel {
    /// Build the model and register all parameters; initialization is
    /// deterministic in `seed`.
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        cfg: &ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors = generate_anchor_grid(cfg.image_size, cfg.anchor_stride, &cfg.depth_values)?;
        let size = cfg.image_size as f64;
        let mut anchor_ref = NdArray::zeros(&[anchors.len(), 2]);
        for (i, a) in anchors.anchors().iter().enumerate() {
            anchor_ref.set2(i, 0, a.x / size);
            anchor_ref.set2(i, 1, a.y / size);
        }

        let backbone = BackboneParams::init(store, &mut rng, &cfg.backbone())?;
        let attn_cfg = cfg.attention();
        let (encoder, decoder, query_mlp) = if cfg.toggles.transformer {
            let encoder = EncoderParams::init(store, &mut rng, &attn_cfg, NUM_LEVELS)?;
            let decoder = DecoderParams::init(store, &mut rng, &attn_cfg, NUM_LEVELS)?;
            let pe_dim = query_pe_dim(cfg.d_model)?;
            let mut init2d =
                |rows: usize, cols: usize| -> NdArray<R> { xavier2d(&mut rng, rows, cols) };
            let query_mlp =
                QueryMlpParams::init(store, "query_mlp", pe_dim, cfg.d_model, &mut init2d)?;
            (Some(encoder), Some(decoder), Some(query_mlp))
        } else {
            (None, None, None)
        };

        let (offset_head, weight_head, direct_head) = if cfg.toggles.a2j_fusion {
            let offset_head = HeadParams::init(
                store,
                &mut rng,
                "offset_head",
                cfg.d_model,
                cfg.head_hidden,
                3 * cfg.n_joints,
            )?;
            let weight_head = if cfg.toggles.learned_weights {
                Some(HeadParams::init(
                    store,
                    &mut rng,
                    "weight_head",
                    cfg.d_model,
                    cfg.head_hidden,
                    cfg.n_joints,
                )?)
            } else {
                None
            };
            (Some(offset_head), weight_head, None)
        } else {
            let direct = HeadParams::init(
                store,
                &mut rng,
                "direct_head",
                cfg.d_model,
                cfg.head_hidden,
                3 * cfg.n_joints,
            )?;
            (None, None, Some(direct))
        };

        Ok(A2jModel {
            cfg: cfg.clone(),
            anchors,
            anchor_ref,
            backbone,
            encoder,
            decoder,
            query_mlp,
            offset_head,
            weight_head,
            direct_head,
        })
    }

    pub fn anchor_reference<R: Real>(&self) -> NdArray<R> {
        NdArray::from_f64(&self.anchor_ref)
    }

    /// Forward pass for one image `[3, S, S]` of unit-range values.
    pub fn forward<R: Real>(
        &self,
        tape: &mut Tape<R>,
        store: &ParamStore<R>,
        image: &NdArray<R>,
    ) -> Result<ModelOutput> {
        Ok(self.forward_trace(tape, store, image)?.output)
    }

    /// Forward pass that also exposes stage intermediates, for gradient
    /// verification of individual stages.
    pub fn forward_trace<R: Real>(
        &self,
        tape: &mut Tape<R>,
        store: &ParamStore<R>,
        image: &NdArray<R>,
    ) -> Result<ForwardTrace> {
        let img = tape.constant(image.clone());
        let pyramid = self.backbone.extract_pyramid(tape, store, img)?;
        let pyramid_levels = pyramid.levels.clone();
        let anchor_ref: NdArray<R> = self.anchor_reference();
        let mut encoder_tokens = None;

        // per-anchor embeddings
        let decoder_out = if self.cfg.toggles.transformer {
            let encoder = self.encoder.as_ref().expect("transformer params");
            let state: EncoderState = encoder.forward(tape, store, &pyramid)?;
            encoder_tokens = Some(state.tokens);
            let queries = anchor_queries(&self.anchors);
            let pq = anchor_query_encoding(
                tape,
                store,
                self.query_mlp.as_ref().expect("query mlp"),
                &queries,
                self.cfg.d_model,
            )?;
            // layer-one decoder embeddings: encoder content at the anchors
            let d0 = gather_at_points(
                tape,
                state.tokens,
                &state.level_shapes,
                &state.level_offsets,
                &anchor_ref,
            )?;
            self.decoder.as_ref().expect("decoder params").forward(
                tape,
                store,
                d0,
                pq,
                &anchor_ref,
                &state,
            )?
        } else {
            let (tokens, level_offsets) = flatten_levels(tape, &pyramid.levels)?;
            gather_at_points(tape, tokens, &pyramid.shapes, &level_offsets, &anchor_ref)?
        };

        let output = if self.cfg.toggles.a2j_fusion {
            let cols = anchor_columns(tape, &self.anchors);
            let offsets = offset_branch(
                tape,
                store,
                self.offset_head.as_ref().expect("offset head"),
                decoder_out,
                self.cfg.n_joints,
            )?;
            let (raw_weights, fused) = if let Some(wh) = &self.weight_head {
                let raw = weight_branch(tape, store, wh, decoder_out, self.cfg.n_joints)?;
                let fused = fuse(tape, &cols, &offsets, raw)?;
                (Some(raw), fused)
            } else {
                let fused = fuse_uniform(tape, &cols, &offsets, self.cfg.n_joints)?;
                (None, fused)
            };
            ModelOutput {
                joints: JointEstimate {
                    x: fused.x,
                    y: fused.y,
                    depth: fused.depth,
                },
                head: Some(FusionHead {
                    offsets,
                    raw_weights,
                    fused,
                    anchors: cols,
                }),
            }
        } else {
            // direct regression from anchor-pooled features, calibrated so
            // zero output sits at the image center / zero depth
            let a = self.anchors.len();
            let pooled = tape.sum_axis(decoder_out, 0)?;
            let pooled = tape.scale(pooled, rf(1.0 / a as f64));
            let pooled = tape.reshape(pooled, &[1, self.cfg.d_model])?;
            let raw = self
                .direct_head
                .as_ref()
                .expect("direct head")
                .forward(tape, store, pooled)?;
            let j = self.cfg.n_joints;
            let half = self.cfg.image_size as f64 / 2.0;
            let (lo, hi) = self.anchors.depth_range();
            let depth_scale = (hi - lo).max(1.0) / 2.0;
            let plane = |tape: &mut Tape<R>, start: usize, scale: f64, shift: f64| {
                let v = tape.narrow(raw, 1, start, j)?;
                let v = tape.reshape(v, &[j])?;
                let v = tape.scale(v, rf(scale));
                let c = tape.constant(NdArray::full(&[j], rf(shift)));
                tape.add(v, c)
            };
            let x = plane(tape, 0, half, half)?;
            let y = plane(tape, j, half, half)?;
            let depth = plane(tape, 2 * j, depth_scale, 0.0)?;
            ModelOutput {
                joints: JointEstimate { x, y, depth },
                head: None,
            }
        };
        Ok(ForwardTrace {
            pyramid_levels,
            encoder_tokens,
            decoder_out,
            output,
        })
    }

    /// Losses for one sample given its forward output.
    pub fn loss<R: Real>(
        &self,
        tape: &mut Tape<R>,
        out: &ModelOutput,
        target: &JointTarget,
        cfg: &LossConfig,
    ) -> Result<(LossVars, LossTargets<R>)> {
        let targets = LossTargets::from_joint_target(target);
        let loss1 = joint_estimation_loss(tape, &out.joints, &targets, cfg)?;
        let loss2 = match &out.head {
            Some(head) => anchor_surrounding_loss(
                tape,
                head.fused.norm_weights,
                &head.anchors,
                &targets,
                cfg,
            )?,
            None => tape.constant(NdArray::scalar(R::zero())),
        };
        let total = total_loss(tape, loss1, loss2, cfg)?;
        Ok((
            LossVars {
                loss1,
                loss2,
                total,
            },
            targets,
        ))
    }

    /// Parameter handles of every attention block, for tests that need to
    /// poke at them. `(encoder attns, decoder (self, cross) pairs)`.
    pub fn attention_params(
        &self,
    ) -> (
        Vec<&crate::attention::AttnParams>,
        Vec<(&crate::attention::MhaParams, &crate::attention::AttnParams)>,
    ) {
        let enc = self
            .encoder
            .as_ref()
            .map(|e| e.layer_attns().collect())
            .unwrap_or_default();
        let dec = self
            .decoder
            .as_ref()
            .map(|d| d.layer_attns().collect())
            .unwrap_or_default();
        (enc, dec)
    }
}
