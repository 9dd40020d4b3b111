//! Component-toggle and anchor-setting sweeps: every row trains a fresh
//! model on the same data, seed and budget, differing only in the toggled
//! component or anchor configuration.

use super::metrics::MetricReport;
use super::{train, TrainConfig, TrainOutcome};
use crate::data_synth::{generate_dataset, SampleRecord, SynthConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone)]
pub struct AblationBudget {
    pub train_samples: usize,
    pub eval_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub data_seed: u64,
}

impl Default for AblationBudget {
    fn default() -> Self {
        AblationBudget {
            train_samples: 512,
            eval_samples: 128,
            epochs: 6,
            batch_size: 16,
            data_seed: 7_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub report: MetricReport,
    pub final_loss: Option<f64>,
}

impl AblationRow {
    pub fn mpjpe(&self) -> f64 {
        self.report.mpjpe_all.unwrap_or(f64::INFINITY)
    }
}

fn shared_data(
    model: &ModelConfig,
    budget: &AblationBudget,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    let synth = SynthConfig::with_image_size(model.image_size);
    let train_set = generate_dataset(&synth, budget.data_seed, budget.train_samples)?;
    let eval_set = generate_dataset(
        &synth,
        budget.data_seed + budget.train_samples as u64,
        budget.eval_samples,
    )?;
    Ok((train_set, eval_set))
}

fn run_row(
    label: &str,
    cfg: &TrainConfig,
    train_set: &[SampleRecord],
    eval_set: &[SampleRecord],
) -> Result<AblationRow> {
    let outcome: TrainOutcome = train(cfg, train_set, eval_set, None, None)?;
    Ok(AblationRow {
        label: label.to_string(),
        report: outcome.final_metrics,
        final_loss: outcome.final_loss,
    })
}

fn budgeted(base: &TrainConfig, budget: &AblationBudget) -> TrainConfig {
    TrainConfig {
        epochs: budget.epochs,
        batch_size: budget.batch_size,
        ..base.clone()
    }
}

/// One row per component toggle, full model first.
pub fn run_component_ablation(
    base: &TrainConfig,
    budget: &AblationBudget,
) -> Result<Vec<AblationRow>> {
    let (train_set, eval_set) = shared_data(&base.model, budget)?;
    let mut rows = Vec::new();
    let variants: [(&str, fn(&mut ModelConfig)); 5] = [
        ("full", |_| {}),
        ("no_transformer", |m| m.toggles.transformer = false),
        ("no_a2j_fusion", |m| m.toggles.a2j_fusion = false),
        ("uniform_weights", |m| m.toggles.learned_weights = false),
        ("no_msdam", |m| m.toggles.msdam = false),
    ];
    for (label, tweak) in variants {
        let mut cfg = budgeted(base, budget);
        tweak(&mut cfg.model);
        rows.push(run_row(label, &cfg, &train_set, &eval_set)?);
    }
    Ok(rows)
}

/// Depth values for an anchor sweep row: a uniform grid over the +-100 mm
/// range (a single value sits at zero).
pub fn sweep_depth_values(count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![0.0];
    }
    (0..count)
        .map(|i| -100.0 + 200.0 * i as f64 / (count - 1) as f64)
        .collect()
}

/// Anchor-setting sweep over in-plane counts {4^2, 16^2} and depth counts
/// {1, 3}, at one shared budget.
pub fn run_anchor_sweep(base: &TrainConfig, budget: &AblationBudget) -> Result<Vec<AblationRow>> {
    let (train_set, eval_set) = shared_data(&base.model, budget)?;
    let mut rows = Vec::new();
    for &(in_plane, depth) in &[(16usize, 3usize), (16, 1), (256, 3), (256, 1)] {
        let mut cfg = budgeted(base, budget);
        apply_anchor_setting(&mut cfg.model, in_plane, depth)?;
        let label = format!("inplane{in_plane}_depth{depth}");
        rows.push(run_row(&label, &cfg, &train_set, &eval_set)?);
    }
    Ok(rows)
}

/// Set the anchor grid from counts: `in_plane` total in-plane anchors (a
/// square number whose side divides the image) and `depth` depth values.
pub fn apply_anchor_setting(
    model: &mut ModelConfig,
    in_plane: usize,
    depth: usize,
) -> Result<()> {
    let side = (in_plane as f64).sqrt().round() as usize;
    if side * side != in_plane {
        return Err(Error::config(
            "in_plane_count",
            format!("{in_plane} is not a square number"),
        ));
    }
    if side == 0 || model.image_size % side != 0 {
        return Err(Error::config(
            "in_plane_count",
            format!("side {side} does not divide image size {}", model.image_size),
        ));
    }
    model.anchor_stride = model.image_size / side;
    model.depth_values = sweep_depth_values(depth);
    Ok(())
}
