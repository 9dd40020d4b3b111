//! Gradient verification across every learnable stage: backbone, encoder,
//! decoder, both heads, the query encoding and the full loss. Each check
//! compares analytic tape gradients against central finite differences on a
//! small model at a jittered (generic) parameter point.

use crate::anchors::{Joint, JointTarget};
use crate::diffmath::gradcheck::jitter_params;
use crate::diffmath::{grad_check, GradCheckConfig, NdArray, ParamStore, Real, Tape, Var};
use crate::error::Result;
use crate::losses::LossConfig;
use crate::model::{A2jModel, ModelConfig, Toggles};

#[derive(Debug, Clone)]
pub struct ModuleCheck {
    pub module: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub checked_params: usize,
    pub worst_param: String,
}

impl ModuleCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Default tolerance per precision: 1e-5 double, 1e-3 single.
pub fn default_tolerance<R: Real>() -> f64 {
    if R::PRECISION == "double" {
        1e-5
    } else {
        1e-3
    }
}

fn small_cfg() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        d_model: 12,
        heads: 2,
        points: 2,
        encoder_layers: 2,
        decoder_layers: 2,
        ffn_dim: 16,
        anchor_stride: 8,
        depth_values: vec![-100.0, 0.0, 100.0],
        n_joints: 6,
        trunk_channels: vec![4, 6, 8, 8, 8],
        gn_groups: 2,
        projection_convs: 1,
        head_hidden: 12,
        pre_norm: false,
        toggles: Toggles::default(),
    }
}

fn check_target(n_joints: usize, image_size: usize) -> JointTarget {
    let s = image_size as f64;
    JointTarget {
        joints: (0..n_joints)
            .map(|i| Joint {
                x: s * (0.2 + 0.55 * (i as f64 * 0.37).fract()),
                y: s * (0.25 + 0.5 * (i as f64 * 0.61).fract()),
                depth: 140.0 * (i as f64 * 0.43).fract() - 70.0,
                valid: i % 5 != 4,
            })
            .collect(),
        hand_roots: vec![0, n_joints / 2],
    }
}

fn sum_of_squares<R: Real>(tape: &mut Tape<R>, v: Var) -> Result<Var> {
    let n = tape.value(v).len();
    let flat = tape.reshape(v, &[n])?;
    let sq = tape.mul(flat, flat)?;
    Ok(tape.mean_all(sq))
}

/// Run the whole suite at the given scalar precision.
pub fn run_gradcheck_suite<R: Real>(tolerance: f64, seed: u64) -> Result<Vec<ModuleCheck>> {
    let cfg = small_cfg();
    let image = NdArray::<R>::from_fn(&[3, cfg.image_size, cfg.image_size], |i| {
        crate::diffmath::rf(((i * 31 + 7) % 97) as f64 / 97.0)
    });
    let target = check_target(cfg.n_joints, cfg.image_size);
    let loss_cfg = LossConfig::default();

    // small steps keep central differences inside one smooth piece of the
    // bilinear/ReLU landscape; single precision needs larger ones to stay
    // above forward-pass roundoff
    let epsilon = if R::PRECISION == "double" { 1e-5 } else { 4e-2 };
    let check_cfg = GradCheckConfig {
        epsilon,
        samples_per_param: Some(4),
        seed: seed ^ 0xfeed,
    };

    type Objective<R> =
        fn(&A2jModel, &mut Tape<R>, &ParamStore<R>, &NdArray<R>, &JointTarget, &LossConfig) -> Result<Var>;
    let stages: [(&str, Objective<R>); 6] = [
        ("backbone", |m, tape, store, img, _, _| {
            let trace = m.forward_trace(tape, store, img)?;
            let mut total: Option<Var> = None;
            for lv in trace.pyramid_levels {
                let s = sum_of_squares(tape, lv)?;
                total = Some(match total {
                    None => s,
                    Some(t) => tape.add(t, s)?,
                });
            }
            Ok(total.expect("pyramid levels"))
        }),
        ("encoder", |m, tape, store, img, _, _| {
            let trace = m.forward_trace(tape, store, img)?;
            sum_of_squares(tape, trace.encoder_tokens.expect("encoder on"))
        }),
        ("decoder", |m, tape, store, img, _, _| {
            let trace = m.forward_trace(tape, store, img)?;
            sum_of_squares(tape, trace.decoder_out)
        }),
        ("offset_head", |m, tape, store, img, _, _| {
            let trace = m.forward_trace(tape, store, img)?;
            let head = trace.output.head.expect("fusion on");
            let x = sum_of_squares(tape, head.offsets.x)?;
            let y = sum_of_squares(tape, head.offsets.y)?;
            let d = sum_of_squares(tape, head.offsets.depth)?;
            let xy = tape.add(x, y)?;
            tape.add(xy, d)
        }),
        ("weight_head", |m, tape, store, img, _, _| {
            let trace = m.forward_trace(tape, store, img)?;
            let head = trace.output.head.expect("fusion on");
            sum_of_squares(tape, head.raw_weights.expect("learned weights on"))
        }),
        ("full_loss", |m, tape, store, img, target, loss_cfg| {
            let out = m.forward(tape, store, img)?;
            let (lv, _) = m.loss(tape, &out, target, loss_cfg)?;
            Ok(lv.total)
        }),
    ];

    let mut results = Vec::new();
    for (name, objective) in stages {
        let mut store = ParamStore::<R>::new();
        let model = A2jModel::init(&mut store, &cfg, seed)?;
        jitter_params(&mut store, 0.05, seed ^ 0xa11ce);
        let report = grad_check(&mut store, &check_cfg, |tape, store| {
            objective(&model, tape, store, &image, &target, &loss_cfg)
        })?;
        let worst_param = report
            .params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
            .map(|p| p.name.clone())
            .unwrap_or_default();
        results.push(ModuleCheck {
            module: name.to_string(),
            max_rel_err: report.max_rel_err,
            tolerance,
            checked_params: report.params.len(),
            worst_param,
        });
    }
    Ok(results)
}
