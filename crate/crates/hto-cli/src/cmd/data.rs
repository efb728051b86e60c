//! Dataset synthesis, detector training, and plot rendering.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use hto_core::detector::{accuracy, save_model, train, ArchitectureSpec, TrainConfig};
use hto_core::seeds::derive_seed;
use hto_core::traces::{save_csv, split, synth_dataset, SynthConfig};
use serde_json::json;

use crate::io;
use crate::render::{render_svg, PlotKind};

use super::{atomic_via, Ctx};

#[derive(Args)]
pub struct SynthArgs {
    /// Traces to generate per class.
    #[arg(long, default_value_t = 500)]
    pub n_per_class: usize,
    /// Samples per trace.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
}

/// `synth` writes `dataset.csv` from the synthetic fixture. The root
/// seed is used directly, so the dataset is the one artifact that
/// changes with `--seed` alone.
pub fn synth(ctx: &Ctx, args: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_per_class: args.n_per_class,
        d: args.samples,
        sample_period_us: ctx.period_us(None),
        seed: ctx.seed,
        ..SynthConfig::default()
    };
    let dataset = synth_dataset(&config)?;
    let path = ctx.out.join("dataset.csv");
    atomic_via(&path, |tmp| Ok(save_csv(&dataset, tmp)?))?;
    println!(
        "wrote {} ({} traces, {} samples each)",
        path.display(),
        dataset.len(),
        dataset.d()
    );
    ctx.finish(
        "synth",
        json!({
            "n_per_class": config.n_per_class,
            "samples": config.d,
            "sample_period_us": config.sample_period_us,
        }),
    )
}

#[derive(Args)]
pub struct TrainArgs {
    /// Input traces; defaults to `<out>/dataset.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Fraction of traces kept for training (stratified per class).
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Sample period for CSV traces, microseconds.
    #[arg(long)]
    pub period: Option<f64>,
}

/// `train` splits the dataset, trains the detector, and writes the
/// split CSVs, the model, and the per-epoch training log.
pub fn run_train(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let data = ctx.path_or(&args.data, "dataset.csv");
    let dataset = ctx.load_dataset(&data, args.period)?;
    let fraction = args
        .train_fraction
        .or(ctx.cfg.train_fraction)
        .unwrap_or(0.8);
    let (train_set, test_set) = split(&dataset, fraction, derive_seed(ctx.seed, "split"))?;
    atomic_via(&ctx.out.join("train.csv"), |tmp| {
        Ok(save_csv(&train_set, tmp)?)
    })?;
    atomic_via(&ctx.out.join("test.csv"), |tmp| {
        Ok(save_csv(&test_set, tmp)?)
    })?;

    let defaults = TrainConfig::default();
    let config = TrainConfig {
        epochs: args.epochs.or(ctx.cfg.epochs).unwrap_or(defaults.epochs),
        batch_size: args.batch.or(ctx.cfg.batch).unwrap_or(defaults.batch_size),
        learning_rate: args
            .learning_rate
            .or(ctx.cfg.learning_rate)
            .unwrap_or(defaults.learning_rate),
        momentum: args
            .momentum
            .or(ctx.cfg.momentum)
            .unwrap_or(defaults.momentum),
        seed: derive_seed(ctx.seed, "train"),
    };
    let (params, stats) = train(&train_set, &ArchitectureSpec::default(), &config)?;

    let model = ctx.out.join("model.json");
    atomic_via(&model, |tmp| Ok(save_model(&params, tmp)?))?;
    let rows: Vec<String> = stats
        .iter()
        .map(|s| format!("{},{},{}", s.epoch, s.mean_loss, s.accuracy_percent))
        .collect();
    io::write_csv(
        &ctx.out.join("training.csv"),
        "epoch,mean_loss,accuracy_percent",
        &rows,
    )?;

    let acc = accuracy(&params, &test_set)?;
    println!(
        "trained {} epochs; held-out accuracy benign {:.1}%, ht {:.1}%",
        stats.len(),
        acc.benign_percent.unwrap_or(f64::NAN),
        acc.ht_percent.unwrap_or(f64::NAN)
    );
    ctx.finish(
        "train",
        json!({
            "data": data.display().to_string(),
            "train_fraction": fraction,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
            "momentum": config.momentum,
        }),
    )
}

#[derive(Args)]
pub struct RenderArgs {
    /// CSV produced by another subcommand.
    #[arg(long)]
    pub input: PathBuf,
    /// curve, histogram, or spectrum.
    #[arg(long)]
    pub kind: PlotKind,
}

/// `render` turns a pipeline CSV into `<out>/<stem>.svg`.
pub fn render(ctx: &Ctx, args: &RenderArgs) -> Result<()> {
    let svg = render_svg(&args.input, args.kind)?;
    let stem = args
        .input
        .file_stem()
        .context("input path has no file name")?;
    let path = ctx.out.join(stem).with_extension("svg");
    io::atomic_write(&path, svg.as_bytes())?;
    println!("wrote {}", path.display());
    ctx.finish(
        "render",
        json!({
            "input": args.input.display().to_string(),
            "kind": format!("{:?}", args.kind).to_lowercase(),
        }),
    )
}
