//! Command-line interface for batch users: dataset synthesis, anchor dumps,
//! training, evaluation, inference, gradient verification and the ablation
//! sweeps. Every run writes a manifest of its resolved configuration.

use crate::anchors::generate_anchor_grid;
use crate::config::Settings;
use crate::data_synth::{generate_dataset, read_dataset, write_dataset, SampleRecord, SynthConfig};
use crate::diffmath::{NdArray, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::model::A2jModel;
use crate::train_eval::{
    evaluate, load_checkpoint, run_anchor_sweep, run_component_ablation, train, MetricReport,
};
use crate::verify::{default_tolerance, run_gradcheck_suite};
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "a2j",
    version,
    about = "Anchor-to-joint 3D hand pose estimation on synthetic data",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Plain-text key=value config file (flags override it)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline overrides, e.g. --set epochs=5 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        for kv in &self.overrides {
            s.apply_override(kv)?;
        }
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic two-hand dataset file
    Synth {
        #[arg(long, default_value_t = 256)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        /// Probability that the hands occlude each other
        #[arg(long, default_value_t = 0.5)]
        overlap: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the 3D anchor grid as CSV (x,y,depth)
    Anchors {
        #[arg(long, default_value_t = 256)]
        image_size: usize,
        #[arg(long, default_value_t = 16)]
        stride: usize,
        /// Comma-separated depth values in mm
        #[arg(long, default_value = "-100,0,100", allow_hyphen_values = true)]
        depths: String,
        /// Write to a file instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on synthetic data (or a dataset file)
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Train on this dataset file instead of generating samples
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Evaluation dataset file (generated when absent)
        #[arg(long)]
        eval_dataset: Option<PathBuf>,
        /// Resume from a checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and print metrics
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict joints and dump per-anchor weights as CSV
    Infer {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Limit on processed samples
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify analytic gradients of every learnable module
    Gradcheck {
        /// single or double
        #[arg(long, default_value = "double")]
        precision: String,
        /// Maximum relative error (defaults per precision)
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Component-toggle and anchor-setting ablation sweeps
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Budget for the anchor sweep rows (defaults to train_samples)
        #[arg(long)]
        sweep_samples: Option<usize>,
        #[arg(long)]
        sweep_epochs: Option<usize>,
        /// Skip the anchor sweep
        #[arg(long)]
        no_sweep: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn out_dir(flag: Option<PathBuf>, default: &str) -> PathBuf {
    flag.unwrap_or_else(|| {
        std::env::var_os("A2J_OUT_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(default)
    })
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth {
            count,
            seed,
            image_size,
            overlap,
            out,
        } => synth(count, seed, image_size, overlap, &out),
        Cmd::Anchors {
            image_size,
            stride,
            depths,
            out,
        } => anchors(image_size, stride, &depths, out.as_deref()),
        Cmd::Train {
            config,
            dataset,
            eval_dataset,
            resume,
            out,
        } => train_cmd(config, dataset, eval_dataset, resume, out),
        Cmd::Eval {
            config,
            checkpoint,
            dataset,
            out,
        } => eval_cmd(config, &checkpoint, &dataset, out),
        Cmd::Infer {
            config,
            checkpoint,
            dataset,
            samples,
            out,
        } => infer_cmd(config, &checkpoint, &dataset, samples, out),
        Cmd::Gradcheck {
            precision,
            tolerance,
            seed,
        } => gradcheck_cmd(&precision, tolerance, seed),
        Cmd::Ablate {
            config,
            sweep_samples,
            sweep_epochs,
            no_sweep,
            out,
        } => ablate_cmd(config, sweep_samples, sweep_epochs, no_sweep, out),
    }
}

fn synth(count: usize, seed: u64, image_size: usize, overlap: f64, out: &Path) -> Result<()> {
    let cfg = SynthConfig {
        image_size,
        overlap_probability: overlap,
        ..SynthConfig::default()
    };
    let records = generate_dataset(&cfg, seed, count)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_dataset(&records, out)?;
    let mut settings = Settings::default();
    settings.apply_flag("image_size", &image_size.to_string())?;
    settings.apply_flag("seed", &seed.to_string())?;
    settings.apply_flag("overlap_probability", &overlap.to_string())?;
    settings.apply_flag("train_samples", &count.to_string())?;
    fs::write(
        manifest_path(out),
        settings.manifest("synth", &[("dataset", out.display().to_string())]),
    )?;
    println!("wrote {} samples to {}", records.len(), out.display());
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".manifest.txt");
    PathBuf::from(p)
}

fn anchors(image_size: usize, stride: usize, depths: &str, out: Option<&Path>) -> Result<()> {
    let depth_values: Vec<f64> = depths
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::config("depths", "comma-separated numbers"))
        })
        .collect::<Result<_>>()?;
    let set = generate_anchor_grid(image_size, stride, &depth_values)?;
    let mut csv = String::new();
    let _ = writeln!(csv, "# a2j anchors image_size={image_size} stride={stride}");
    let _ = writeln!(csv, "x,y,depth");
    for a in set.anchors() {
        let _ = writeln!(csv, "{},{},{}", a.x, a.y, a.depth);
    }
    match out {
        Some(path) => {
            fs::write(path, csv)?;
            println!("wrote {} anchors to {}", set.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn load_or_generate(
    dataset: Option<&Path>,
    settings: &Settings,
    count_key: usize,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    match dataset {
        Some(path) => read_dataset(path),
        None => {
            let image_size = settings.get_usize("image_size")?;
            let cfg = SynthConfig {
                image_size,
                overlap_probability: settings.get_f64("overlap_probability")?,
                ..SynthConfig::default()
            };
            generate_dataset(&cfg, seed, count_key)
        }
    }
}

fn train_cmd(
    config: ConfigArgs,
    dataset: Option<PathBuf>,
    eval_dataset: Option<PathBuf>,
    resume: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let settings = config.settings()?;
    let cfg = settings.train_config()?;
    let (train_n, eval_n) = settings.synth_samples()?;
    let data_seed = settings.get_u64("data_seed")?;
    let train_set = load_or_generate(dataset.as_deref(), &settings, train_n, data_seed)?;
    let eval_set = load_or_generate(
        eval_dataset.as_deref(),
        &settings,
        eval_n,
        data_seed + train_n as u64,
    )?;
    let dir = out_dir(out, "train");
    fs::create_dir_all(&dir)?;
    fs::write(
        dir.join("manifest.txt"),
        settings.manifest(
            "train",
            &[
                ("checkpoint", dir.join("checkpoint.ckpt").display().to_string()),
                ("train_log", dir.join("train_log.csv").display().to_string()),
                ("metrics", dir.join("metrics.csv").display().to_string()),
            ],
        ),
    )?;
    let outcome = train(&cfg, &train_set, &eval_set, Some(&dir), resume.as_deref())?;
    println!(
        "trained {} steps; untrained mpjpe {}, final mpjpe {}",
        outcome.steps,
        fmt_opt(outcome.initial_metrics.mpjpe_all),
        fmt_opt(outcome.final_metrics.mpjpe_all),
    );
    println!("checkpoint: {}", dir.join("checkpoint.ckpt").display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "absent".into())
}

fn print_report(report: &MetricReport) {
    println!("samples:      {}", report.samples);
    println!("mpjpe_all:    {}", fmt_opt(report.mpjpe_all));
    println!("mpjpe_single: {}", fmt_opt(report.mpjpe_single));
    println!("mpjpe_two:    {}", fmt_opt(report.mpjpe_two));
    println!("epe:          {}", fmt_opt(report.epe));
}

fn rebuild_model(
    settings: &Settings,
    checkpoint: &Path,
) -> Result<(A2jModel, ParamStore<f32>)> {
    let cfg = settings.train_config()?;
    let mut store = ParamStore::<f32>::new();
    let model = A2jModel::init(&mut store, &cfg.model, cfg.seed)?;
    load_checkpoint(&mut store, checkpoint)?;
    Ok((model, store))
}

fn eval_cmd(
    config: ConfigArgs,
    checkpoint: &Path,
    dataset: &Path,
    out: Option<PathBuf>,
) -> Result<()> {
    let settings = config.settings()?;
    let (model, store) = rebuild_model(&settings, checkpoint)?;
    let samples = read_dataset(dataset)?;
    let report = evaluate(&model, &store, &samples);
    println!(
        "# a2j eval checkpoint={} dataset={} code_version={}",
        checkpoint.display(),
        dataset.display(),
        env!("CARGO_PKG_VERSION")
    );
    print_report(&report);
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        let mut csv = String::from("joint,mean_error\n");
        for (j, e) in report.per_joint.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{j},{}",
                e.map(|v| v.to_string()).unwrap_or_else(|| "absent".into())
            );
        }
        fs::write(dir.join("per_joint.csv"), csv)?;
        fs::write(
            dir.join("manifest.txt"),
            settings.manifest("eval", &[("dataset", dataset.display().to_string())]),
        )?;
        println!("per-joint errors: {}", dir.join("per_joint.csv").display());
    }
    Ok(())
}

fn infer_cmd(
    config: ConfigArgs,
    checkpoint: &Path,
    dataset: &Path,
    samples: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let settings = config.settings()?;
    let (model, store) = rebuild_model(&settings, checkpoint)?;
    let records = read_dataset(dataset)?;
    let dir = out_dir(out, "infer");
    fs::create_dir_all(&dir)?;
    let mut joints_csv = String::from("sample,joint,x,y,depth\n");
    let mut weights_csv = String::from("sample,joint,anchor,anchor_x,anchor_y,anchor_depth,weight\n");
    for (si, record) in records.iter().take(samples).enumerate() {
        let mut tape = Tape::new();
        let image = NdArray::<f32>::from_f64(&record.image);
        let output = model.forward(&mut tape, &store, &image)?;
        for (j, (x, y, d)) in output.predicted_joints(&tape).iter().enumerate() {
            let _ = writeln!(joints_csv, "{si},{j},{x},{y},{d}");
        }
        if let Some(bundle) = output.bundle(&tape) {
            for j in 0..bundle.num_joints() {
                for (ai, anchor) in model.anchors.anchors().iter().enumerate() {
                    let _ = writeln!(
                        weights_csv,
                        "{si},{j},{ai},{},{},{},{}",
                        anchor.x,
                        anchor.y,
                        anchor.depth,
                        bundle.norm_weights.at2(ai, j)
                    );
                }
            }
        }
    }
    fs::write(dir.join("joints.csv"), joints_csv)?;
    fs::write(dir.join("weights.csv"), weights_csv)?;
    fs::write(
        dir.join("manifest.txt"),
        settings.manifest("infer", &[("dataset", dataset.display().to_string())]),
    )?;
    println!("wrote {} and {}", dir.join("joints.csv").display(), dir.join("weights.csv").display());
    Ok(())
}

fn gradcheck_cmd(precision: &str, tolerance: Option<f64>, seed: u64) -> Result<()> {
    println!(
        "# a2j gradcheck precision={precision} seed={seed} code_version={}",
        env!("CARGO_PKG_VERSION")
    );
    let checks = match precision {
        "double" => {
            let tol = tolerance.unwrap_or(default_tolerance::<f64>());
            run_gradcheck_suite::<f64>(tol, seed)?
        }
        "single" => {
            let tol = tolerance.unwrap_or(default_tolerance::<f32>());
            run_gradcheck_suite::<f32>(tol, seed)?
        }
        other => {
            return Err(Error::config(
                "precision",
                format!("'{other}' is not one of single|double"),
            ))
        }
    };
    println!("{:<14} {:>12} {:>10}  result", "module", "max_rel_err", "tolerance");
    let mut all_pass = true;
    for c in &checks {
        all_pass &= c.passed();
        println!(
            "{:<14} {:>12.3e} {:>10.0e}  {}",
            c.module,
            c.max_rel_err,
            c.tolerance,
            if c.passed() { "PASS" } else { "FAIL" }
        );
    }
    if !all_pass {
        let failing: Vec<&str> = checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| c.module.as_str())
            .collect();
        return Err(Error::GradCheckFailed(failing.join(", ")));
    }
    Ok(())
}

fn ablate_cmd(
    config: ConfigArgs,
    sweep_samples: Option<usize>,
    sweep_epochs: Option<usize>,
    no_sweep: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    let settings = config.settings()?;
    let base = settings.train_config()?;
    let budget = settings.ablation_budget()?;
    let dir = out_dir(out, "ablate");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("manifest.txt"), settings.manifest("ablate", &[]))?;

    let mut csv = String::from("row,mpjpe_all,mpjpe_single,mpjpe_two,epe,final_loss\n");
    println!("component ablation ({} samples, {} epochs):", budget.train_samples, budget.epochs);
    let rows = run_component_ablation(&base, &budget)?;
    for row in &rows {
        println!("  {:<18} mpjpe {}", row.label, fmt_opt(row.report.mpjpe_all));
        append_row(&mut csv, row);
    }
    if !no_sweep {
        let mut sweep_budget = budget.clone();
        if let Some(s) = sweep_samples {
            sweep_budget.train_samples = s;
        }
        if let Some(e) = sweep_epochs {
            sweep_budget.epochs = e;
        }
        println!(
            "anchor sweep ({} samples, {} epochs):",
            sweep_budget.train_samples, sweep_budget.epochs
        );
        let sweep = run_anchor_sweep(&base, &sweep_budget)?;
        for row in &sweep {
            println!("  {:<18} mpjpe {}", row.label, fmt_opt(row.report.mpjpe_all));
            append_row(&mut csv, row);
        }
    }
    fs::write(dir.join("ablation.csv"), &csv)?;
    println!("table: {}", dir.join("ablation.csv").display());
    Ok(())
}

fn append_row(csv: &mut String, row: &crate::train_eval::AblationRow) {
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "absent".into());
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{}",
        row.label,
        fmt(row.report.mpjpe_all),
        fmt(row.report.mpjpe_single),
        fmt(row.report.mpjpe_two),
        fmt(row.report.epe),
        fmt(row.final_loss)
    );
}
