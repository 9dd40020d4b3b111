//! Optimization loop, evaluation, and the ablation/anchor-sweep harnesses.

pub mod ablation;
pub mod checkpoint;
pub mod metrics;
pub mod optimizer;

pub use ablation::{run_anchor_sweep, run_component_ablation, AblationBudget, AblationRow};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use metrics::{epe, mpjpe, MetricAccumulator, MetricReport};
pub use optimizer::AdamW;

use crate::data_synth::SampleRecord;
use crate::diffmath::{NdArray, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossReport};
use crate::model::{A2jModel, ModelConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// 1 runs strictly single-threaded; higher values split each batch
    /// across worker threads (the gradient reduction order is fixed, so
    /// results are identical either way).
    pub threads: usize,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            model: ModelConfig::desk(),
            loss: LossConfig::default(),
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            epochs: 10,
            batch_size: 16,
            seed: 1,
            threads: 1,
        }
    }
}

/// Files written by a training run.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub train_log: PathBuf,
    pub metrics_log: PathBuf,
}

pub struct TrainOutcome {
    pub model: A2jModel,
    pub store: ParamStore<f32>,
    pub steps: usize,
    /// Metrics on the eval set before any training.
    pub initial_metrics: MetricReport,
    /// Metrics after the final epoch (equals initial for zero epochs).
    pub final_metrics: MetricReport,
    pub final_loss: Option<f64>,
    pub artifacts: Option<TrainArtifacts>,
}

struct ItemGrads {
    grads: Vec<(ParamId, NdArray<f32>)>,
    report: LossReport,
}

fn run_item(
    model: &A2jModel,
    store: &ParamStore<f32>,
    loss_cfg: &LossConfig,
    sample: &SampleRecord,
) -> Result<ItemGrads> {
    let mut tape = Tape::new();
    let image = NdArray::<f32>::from_f64(&sample.image);
    let out = model.forward(&mut tape, store, &image)?;
    let (loss_vars, targets) = model.loss(&mut tape, &out, &sample.targets, loss_cfg)?;
    let grads = tape.backward(loss_vars.total)?;
    let report = LossReport::from_tape(&tape, &loss_vars, &out.joints, &targets, loss_cfg);
    Ok(ItemGrads {
        grads: tape.param_grads(&grads),
        report,
    })
}

fn batch_grads(
    model: &A2jModel,
    store: &ParamStore<f32>,
    loss_cfg: &LossConfig,
    batch: &[&SampleRecord],
    threads: usize,
) -> Result<Vec<ItemGrads>> {
    if threads <= 1 || batch.len() <= 1 {
        return batch
            .iter()
            .map(|s| run_item(model, store, loss_cfg, s))
            .collect();
    }
    let chunk = batch.len().div_ceil(threads);
    let mut slots: Vec<Option<Result<ItemGrads>>> = Vec::new();
    slots.resize_with(batch.len(), || None);
    std::thread::scope(|scope| {
        let mut rest = slots.as_mut_slice();
        let mut offset = 0;
        while !rest.is_empty() {
            let take = chunk.min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            let items = &batch[offset..offset + take];
            scope.spawn(move || {
                for (slot, sample) in head.iter_mut().zip(items) {
                    *slot = Some(run_item(model, store, loss_cfg, sample));
                }
            });
            rest = tail;
            offset += take;
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("worker filled the slot"))
        .collect()
}

/// Train a model on `train_set`, evaluating on `eval_set` each epoch.
/// When `out_dir` is set, writes `train_log.csv` (per-step losses),
/// `metrics.csv` (per-epoch metrics, epoch 0 is the untrained model) and
/// `checkpoint.ckpt`. On divergence the last finite parameters are saved
/// before the error returns.
pub fn train(
    cfg: &TrainConfig,
    train_set: &[SampleRecord],
    eval_set: &[SampleRecord],
    out_dir: Option<&Path>,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::config("dataset", "training set must be non-empty"));
    }
    let mut store = ParamStore::<f32>::new();
    let model = A2jModel::init(&mut store, &cfg.model, cfg.seed)?;
    if let Some(path) = resume {
        load_checkpoint(&mut store, path)?;
    }
    let artifacts = out_dir.map(|dir| TrainArtifacts {
        checkpoint: dir.join("checkpoint.ckpt"),
        train_log: dir.join("train_log.csv"),
        metrics_log: dir.join("metrics.csv"),
    });
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }

    let mut train_log = String::from("step,epoch,loss1,loss2,total\n");
    let mut metrics_log = String::from("epoch,samples,mpjpe_all,mpjpe_single,mpjpe_two,epe\n");

    let initial_metrics = evaluate(&model, &store, eval_set);
    append_metrics_row(&mut metrics_log, 0, &initial_metrics);

    let mut opt = AdamW::new(&store, cfg.learning_rate, cfg.weight_decay);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x51ab_77f0_3c2d_9e14);
    let mut step = 0usize;
    let mut final_metrics = initial_metrics.clone();
    let mut final_loss = None;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch_idx in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&SampleRecord> = batch_idx.iter().map(|&i| &train_set[i]).collect();
            let items = match batch_grads(&model, &store, &cfg.loss, &batch, cfg.threads) {
                Ok(items) => items,
                Err(Error::NonFiniteObjective) => {
                    // the forward itself went non-finite: params are still
                    // the last finite state
                    if let Some(a) = &artifacts {
                        save_checkpoint(&store, &a.checkpoint)?;
                        write_logs(a, &train_log, &metrics_log)?;
                    }
                    return Err(Error::Diverged { step });
                }
                Err(e) => return Err(e),
            };
            let n = items.len() as f64;
            let (mut l1, mut l2, mut lt) = (0.0, 0.0, 0.0);
            store.zero_grads();
            for item in &items {
                l1 += item.report.loss1 / n;
                l2 += item.report.loss2 / n;
                lt += item.report.total / n;
                for (id, g) in &item.grads {
                    store.accumulate_grad(*id, g)?;
                }
            }
            store.scale_grads(1.0 / n as f32);
            step += 1;
            let _ = writeln!(train_log, "{step},{epoch},{l1},{l2},{lt}");
            if !lt.is_finite() {
                if let Some(a) = &artifacts {
                    save_checkpoint(&store, &a.checkpoint)?;
                    write_logs(a, &train_log, &metrics_log)?;
                }
                return Err(Error::Diverged { step });
            }
            let snapshot = store.snapshot();
            opt.step(&mut store);
            if !params_finite(&store) {
                store.restore(&snapshot)?;
                if let Some(a) = &artifacts {
                    save_checkpoint(&store, &a.checkpoint)?;
                    write_logs(a, &train_log, &metrics_log)?;
                }
                return Err(Error::Diverged { step });
            }
            final_loss = Some(lt);
        }
        final_metrics = evaluate(&model, &store, eval_set);
        append_metrics_row(&mut metrics_log, epoch, &final_metrics);
        // flush after every epoch so interrupted runs keep their logs
        if let Some(a) = &artifacts {
            write_logs(a, &train_log, &metrics_log)?;
        }
    }

    if let Some(a) = &artifacts {
        save_checkpoint(&store, &a.checkpoint)?;
        write_logs(a, &train_log, &metrics_log)?;
    }
    Ok(TrainOutcome {
        model,
        store,
        steps: step,
        initial_metrics,
        final_metrics,
        final_loss,
        artifacts,
    })
}

fn params_finite(store: &ParamStore<f32>) -> bool {
    store.iter().all(|(_, p)| p.value.all_finite())
}

fn write_logs(a: &TrainArtifacts, train_log: &str, metrics_log: &str) -> Result<()> {
    fs::write(&a.train_log, train_log)?;
    fs::write(&a.metrics_log, metrics_log)?;
    Ok(())
}

fn append_metrics_row(log: &mut String, epoch: usize, m: &MetricReport) {
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "absent".into());
    let _ = writeln!(
        log,
        "{},{},{},{},{},{}",
        epoch,
        m.samples,
        fmt(m.mpjpe_all),
        fmt(m.mpjpe_single),
        fmt(m.mpjpe_two),
        fmt(m.epe)
    );
}

/// Evaluate a model over samples, partitioning by the overlap flag.
pub fn evaluate(
    model: &A2jModel,
    store: &ParamStore<f32>,
    samples: &[SampleRecord],
) -> MetricReport {
    let mut acc = MetricAccumulator::new();
    for s in samples {
        let mut tape = Tape::new();
        let image = NdArray::<f32>::from_f64(&s.image);
        let out = model
            .forward(&mut tape, store, &image)
            .expect("forward on valid sample");
        let pred = out.predicted_joints(&tape);
        acc.add_sample(&pred, &s.targets, s.overlap);
    }
    acc.report()
}
