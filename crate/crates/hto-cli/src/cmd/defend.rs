//! Defender-side commands: band-pass filtering and adversarial
//! training.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use hto_core::attack::{evaluate_delta, evaluate_patch, load_patch, ShiftPolicy};
use hto_core::defense::{adversarial_train, robustness_curve, ATConfig};
use hto_core::detector::{accuracy, load_model, save_model, ArchitectureSpec, TrainConfig};
use hto_core::seeds::derive_seed;
use hto_core::spectral::choose_band;
use serde_json::json;

use crate::io;

use super::attack::budget_for;
use super::{atomic_via, parse_band, parse_eps, Ctx};

#[derive(Subcommand)]
pub enum DefendCmd {
    /// Evaluate the band-pass-filter countermeasure against a patch.
    Filter(FilterArgs),
    /// Train a hardened detector with projected-gradient inner attacks.
    Advtrain(AdvtrainArgs),
    /// Compare plain vs hardened robustness across attack budgets.
    Curve(CurveArgs),
}

#[derive(Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub patch: Option<PathBuf>,
    /// Evaluation traces; defaults to `<out>/test.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Defender band as `lo:hi` in MHz; defaults to the band holding
    /// `--energy` of the evaluation set's energy.
    #[arg(long)]
    pub band: Option<String>,
    #[arg(long)]
    pub energy: Option<f64>,
    #[arg(long)]
    pub period: Option<f64>,
}

/// `defend filter` scores the detector with and without the band-pass
/// preprocessing, clean and under the patch.
pub fn filter(ctx: &Ctx, args: &FilterArgs) -> Result<()> {
    let model_path = ctx.path_or(&args.model, "model.json");
    let params = load_model(&model_path)?;
    let patch_path = ctx.path_or(&args.patch, "patch_sync.json");
    let patch = load_patch(&patch_path)?;
    let data = ctx.path_or(&args.data, "test.csv");
    let dataset = ctx.load_dataset(&data, args.period)?;

    let band = match &args.band {
        Some(spec) => parse_band(spec)?,
        None => choose_band(&dataset, args.energy.or(ctx.cfg.energy).unwrap_or(0.99))?,
    };
    let aligned = ShiftPolicy::none();
    let zero = vec![0.0; dataset.d()];
    let clean = accuracy(&params, &dataset)?;
    let clean_f = evaluate_delta(&params, &dataset, &zero, &aligned, Some(&band))?;
    let patched = evaluate_patch(&params, &dataset, &patch, &aligned, None)?;
    let patched_f = evaluate_patch(&params, &dataset, &patch, &aligned, Some(&band))?;

    let fmt = |setting: &str, acc: &hto_core::detector::Accuracy| {
        format!(
            "{setting},{},{}",
            acc.benign_percent.unwrap_or(f64::NAN),
            acc.ht_percent.unwrap_or(f64::NAN)
        )
    };
    let rows = vec![
        fmt("clean_unfiltered", &clean),
        fmt("clean_filtered", &clean_f),
        fmt("patched_unfiltered", &patched),
        fmt("patched_filtered", &patched_f),
    ];
    io::write_csv(
        &ctx.out.join("filter_eval.csv"),
        "setting,class0_percent,class1_percent",
        &rows,
    )?;
    println!(
        "band [{:.4}, {:.4}] MHz; patched ht {:.1}% -> filtered {:.1}%",
        band.f_min_hz / 1e6,
        band.f_max_hz / 1e6,
        patched.ht_percent.unwrap_or(f64::NAN),
        patched_f.ht_percent.unwrap_or(f64::NAN)
    );
    ctx.finish(
        "defend-filter",
        json!({
            "model": model_path.display().to_string(),
            "patch": patch_path.display().to_string(),
            "data": data.display().to_string(),
            "band_mhz": [band.f_min_hz / 1e6, band.f_max_hz / 1e6],
        }),
    )
}

#[derive(Args)]
pub struct AdvtrainArgs {
    /// Inner-attack budget, mW.
    #[arg(long)]
    pub eps_train: Option<f64>,
    /// Inner-attack step, mW.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub pgd_iters: Option<usize>,
    /// Training traces; defaults to `<out>/train.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out traces for the printed summary; defaults to
    /// `<out>/test.csv` and is skipped when absent.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub period: Option<f64>,
}

/// `defend advtrain` trains a hardened model and writes
/// `model_at.json` plus its training log.
pub fn advtrain(ctx: &Ctx, args: &AdvtrainArgs) -> Result<()> {
    let eps = args
        .eps_train
        .or(ctx.cfg.epsilon_mw)
        .context("adversarial training needs --eps-train (or epsilon_mw in the config)")?;
    let mut at = ATConfig::for_epsilon(eps)?;
    if let Some(step) = args.step.or(ctx.cfg.step_mw) {
        at.step_mw = step;
    }
    if let Some(iters) = args.pgd_iters {
        at.pgd_iters = iters;
    }

    let data = ctx.path_or(&args.data, "train.csv");
    let train_set = ctx.load_dataset(&data, args.period)?;
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
        seed: derive_seed(ctx.seed, "advtrain"),
    };
    let (params, stats) =
        adversarial_train(&train_set, &ArchitectureSpec::default(), &config, &at)?;

    let model = ctx.out.join("model_at.json");
    atomic_via(&model, |tmp| Ok(save_model(&params, tmp)?))?;
    let rows: Vec<String> = stats
        .iter()
        .map(|s| format!("{},{},{}", s.epoch, s.mean_loss, s.accuracy_percent))
        .collect();
    io::write_csv(
        &ctx.out.join("training_at.csv"),
        "epoch,mean_loss,accuracy_percent",
        &rows,
    )?;
    println!(
        "wrote {} (eps_train {} mW, {} epochs)",
        model.display(),
        at.epsilon_mw,
        stats.len()
    );

    let eval = ctx.path_or(&args.eval, "test.csv");
    if eval.exists() {
        let test_set = ctx.load_dataset(&eval, args.period)?;
        let acc = accuracy(&params, &test_set)?;
        println!(
            "hardened clean accuracy: benign {:.1}%, ht {:.1}%",
            acc.benign_percent.unwrap_or(f64::NAN),
            acc.ht_percent.unwrap_or(f64::NAN)
        );
    }
    ctx.finish(
        "defend-advtrain",
        json!({
            "eps_train_mw": at.epsilon_mw,
            "step_mw": at.step_mw,
            "pgd_iters": at.pgd_iters,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
            "momentum": config.momentum,
            "data": data.display().to_string(),
        }),
    )
}

#[derive(Args)]
pub struct CurveArgs {
    /// Budget grid: `start:stop:step` or a comma-separated list, mW.
    #[arg(long)]
    pub eps: String,
    /// Plain model; defaults to `<out>/model.json`.
    #[arg(long)]
    pub plain: Option<PathBuf>,
    /// Hardened model; defaults to `<out>/model_at.json`.
    #[arg(long)]
    pub at_model: Option<PathBuf>,
    /// Traces for patch generation and evaluation; defaults to
    /// `<out>/test.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub period: Option<f64>,
}

/// `defend curve` writes `robustness.csv`: per budget, each model's
/// class-1 accuracy under a patch tuned against that model.
pub fn curve(ctx: &Ctx, args: &CurveArgs) -> Result<()> {
    let plain_path = ctx.path_or(&args.plain, "model.json");
    let plain = load_model(&plain_path)?;
    let at_path = ctx.path_or(&args.at_model, "model_at.json");
    let hardened = load_model(&at_path)?;
    let data = ctx.path_or(&args.data, "test.csv");
    let dataset = ctx.load_dataset(&data, args.period)?;
    let eps = parse_eps(&args.eps)?;
    let base = budget_for(
        ctx,
        Some(eps[0]),
        args.alpha,
        args.sigma,
        args.iters,
        args.batch,
        200,
    );
    let curve = robustness_curve(&plain, &hardened, &dataset, &base, &eps)?;
    let rows: Vec<String> = curve
        .iter()
        .map(|p| {
            format!(
                "{},{},{},{}",
                p.epsilon_mw, p.plain_acc_percent, p.at_acc_percent, p.at_clean_percent
            )
        })
        .collect();
    let csv = ctx.out.join("robustness.csv");
    io::write_csv(&csv, "epsilon_mw,plain_acc,at_acc,at_clean_acc", &rows)?;
    println!("wrote {}", csv.display());
    for p in &curve {
        println!(
            "  eps {} mW: plain ht {:.1}%, hardened ht {:.1}%",
            p.epsilon_mw, p.plain_acc_percent, p.at_acc_percent
        );
    }
    ctx.finish(
        "defend-curve",
        json!({
            "eps_mw": eps,
            "plain": plain_path.display().to_string(),
            "at_model": at_path.display().to_string(),
            "data": data.display().to_string(),
            "alpha": base.alpha,
            "sigma_mw": base.sigma_mw,
            "iterations": base.iterations,
            "batch_size": base.batch_size,
        }),
    )
}
