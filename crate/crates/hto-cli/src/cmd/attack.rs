//! Patch generation: sync/unsync/adaptive attacks, quantization, and
//! budget sweeps.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use hto_core::attack::{
    budget_sweep, epsilon_star, evaluate_patch, generate_adaptive_patch, generate_patch,
    generate_unsync_patch, load_patch, save_patch, AdversarialPatch, PatchBudget, ShiftPolicy,
    SweepMode,
};
use hto_core::detector::{load_model, DetectorParams};
use hto_core::quantizer::{build_subspace, generate_quantized_patch, histogram, QuantizationStrategy};
use hto_core::seeds::derive_seed;
use hto_core::spectral::{choose_band, spectrum_report, BandPassFilter};
use hto_core::traces::TraceDataset;
use serde_json::json;

use crate::io;

use super::{atomic_via, parse_band, parse_eps, Ctx};

/// Default attack budget when neither flag nor config gives one, mW.
pub const DEFAULT_EPS_MW: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackMode {
    Sync,
    Unsync,
    Adaptive,
}

impl AttackMode {
    fn name(self) -> &'static str {
        match self {
            AttackMode::Sync => "sync",
            AttackMode::Unsync => "unsync",
            AttackMode::Adaptive => "adaptive",
        }
    }

    /// Shift-robust modes need more iterations to average over
    /// alignments.
    fn default_iterations(self) -> usize {
        match self {
            AttackMode::Sync => 200,
            AttackMode::Unsync | AttackMode::Adaptive => 400,
        }
    }
}

#[derive(Args)]
pub struct AttackArgs {
    #[arg(long, value_enum)]
    pub mode: AttackMode,
    /// L-infinity budget, mW.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Gradient step size, mW; defaults to 0.01 * eps.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Robustness noise during optimization, mW; defaults to 0.02 * eps.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Optimization iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Generation traces; defaults to `<out>/train.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out traces for the printed summary; defaults to
    /// `<out>/test.csv` and is skipped when absent.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Detector weights; defaults to `<out>/model.json`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Adaptive only: band as `lo:hi` in MHz; defaults to the band
    /// holding `--energy` of the generation set's energy.
    #[arg(long)]
    pub band: Option<String>,
    /// Adaptive only: clean-energy fraction for the default band.
    #[arg(long)]
    pub energy: Option<f64>,
    /// Adaptive only: also optimize over random alignments.
    #[arg(long)]
    pub shift_robust: bool,
    #[arg(long)]
    pub period: Option<f64>,
}

pub(super) fn budget_for(
    ctx: &Ctx,
    eps: Option<f64>,
    alpha: Option<f64>,
    sigma: Option<f64>,
    iters: Option<usize>,
    batch: Option<usize>,
    default_iters: usize,
) -> PatchBudget {
    let eps = eps.or(ctx.cfg.epsilon_mw).unwrap_or(DEFAULT_EPS_MW);
    PatchBudget {
        epsilon_mw: eps,
        alpha: alpha.unwrap_or(0.01 * eps),
        sigma_mw: sigma.or(ctx.cfg.noise_mw).unwrap_or(0.02 * eps),
        iterations: iters.or(ctx.cfg.iterations).unwrap_or(default_iters),
        batch_size: batch.or(ctx.cfg.batch).unwrap_or(32),
        seed: derive_seed(ctx.seed, "attack"),
    }
}

fn write_spectrum(
    ctx: &Ctx,
    name: &str,
    delta: &[f64],
    period_us: f64,
) -> Result<()> {
    let spectrum = spectrum_report(delta, period_us)?;
    let rows: Vec<String> = spectrum
        .iter()
        .map(|(f, m)| format!("{f},{m}"))
        .collect();
    io::write_csv(&ctx.out.join(name), "freq_hz,magnitude", &rows)
}

fn print_eval(
    ctx: &Ctx,
    params: &DetectorParams,
    patch: &AdversarialPatch,
    eval: &Option<PathBuf>,
    period: Option<f64>,
    policy: &ShiftPolicy,
) -> Result<()> {
    let path = ctx.path_or(eval, "test.csv");
    if !path.exists() {
        println!("(no eval set at {}, skipping evaluation)", path.display());
        return Ok(());
    }
    let set = ctx.load_dataset(&path, period)?;
    let acc = evaluate_patch(params, &set, patch, policy, None)?;
    println!(
        "patched accuracy on {}: benign {:.1}%, ht {:.1}%",
        set.name(),
        acc.benign_percent.unwrap_or(f64::NAN),
        acc.ht_percent.unwrap_or(f64::NAN)
    );
    Ok(())
}

/// `attack` generates one universal patch and writes it with its
/// spectrum.
pub fn attack(ctx: &Ctx, args: &AttackArgs) -> Result<()> {
    let model_path = ctx.path_or(&args.model, "model.json");
    let params = load_model(&model_path)?;
    let data = ctx.path_or(&args.data, "train.csv");
    let gen_set = ctx.load_dataset(&data, args.period)?;
    let budget = budget_for(
        ctx,
        args.eps,
        args.alpha,
        args.sigma,
        args.iters,
        args.batch,
        args.mode.default_iterations(),
    );

    let mut band_echo = None;
    let patch = match args.mode {
        AttackMode::Sync => generate_patch(&gen_set, &params, &budget)?,
        AttackMode::Unsync => generate_unsync_patch(&gen_set, &params, &budget)?,
        AttackMode::Adaptive => {
            let band = resolve_band(ctx, &args.band, args.energy, &gen_set)?;
            band_echo = Some([band.f_min_hz / 1e6, band.f_max_hz / 1e6]);
            generate_adaptive_patch(&gen_set, &params, &budget, &band, args.shift_robust)?
        }
    };

    let name = args.mode.name();
    let patch_path = ctx.out.join(format!("patch_{name}.json"));
    atomic_via(&patch_path, |tmp| Ok(save_patch(&patch, tmp)?))?;
    write_spectrum(
        ctx,
        &format!("spectrum_{name}.csv"),
        patch.delta(),
        gen_set.sample_period_us(),
    )?;
    println!(
        "wrote {} (eps {} mW, {} iterations)",
        patch_path.display(),
        budget.epsilon_mw,
        budget.iterations
    );

    let policy = match args.mode {
        AttackMode::Unsync => ShiftPolicy::uniform(derive_seed(ctx.seed, "eval-shift")),
        _ => ShiftPolicy::none(),
    };
    print_eval(ctx, &params, &patch, &args.eval, args.period, &policy)?;
    ctx.finish(
        "attack",
        json!({
            "mode": name,
            "eps_mw": budget.epsilon_mw,
            "alpha": budget.alpha,
            "sigma_mw": budget.sigma_mw,
            "iterations": budget.iterations,
            "batch_size": budget.batch_size,
            "band_mhz": band_echo,
            "shift_robust": args.shift_robust,
            "data": data.display().to_string(),
            "model": model_path.display().to_string(),
        }),
    )
}

fn resolve_band(
    ctx: &Ctx,
    flag: &Option<String>,
    energy: Option<f64>,
    clean: &TraceDataset,
) -> Result<BandPassFilter> {
    match flag {
        Some(spec) => parse_band(spec),
        None => {
            let fraction = energy.or(ctx.cfg.energy).unwrap_or(0.99);
            Ok(choose_band(clean, fraction)?)
        }
    }
}

fn parse_strategy(spec: &str) -> Result<QuantizationStrategy> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["two_level"] => Ok(QuantizationStrategy::TwoLevel),
        ["three_level"] => Ok(QuantizationStrategy::ThreeLevel),
        ["grid", r] => Ok(QuantizationStrategy::Grid {
            resolution_mw: r
                .parse()
                .with_context(|| format!("bad grid resolution {r:?}"))?,
        }),
        ["top_k", k, w] => Ok(QuantizationStrategy::TopK {
            k: k.parse().with_context(|| format!("bad level count {k:?}"))?,
            bin_width_mw: w
                .parse()
                .with_context(|| format!("bad bin width {w:?}"))?,
        }),
        _ => anyhow::bail!(
            "unknown strategy {spec:?} (two_level, three_level, grid:RES, top_k:K:WIDTH)"
        ),
    }
}

#[derive(Args)]
pub struct QuantizeArgs {
    /// Source patch; defaults to `<out>/patch_sync.json`.
    #[arg(long)]
    pub patch: Option<PathBuf>,
    /// two_level, three_level, grid:RES, or top_k:K:WIDTH.
    #[arg(long, default_value = "two_level")]
    pub strategy: String,
    /// Gradient step, mW; defaults to 0.6x the largest level gap so
    /// the nearest-level projection can actually switch levels.
    #[arg(long)]
    pub step: Option<f64>,
    /// Bin width for the written value histogram, mW.
    #[arg(long, default_value_t = 0.1)]
    pub bin: f64,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub shift_robust: bool,
    #[arg(long)]
    pub period: Option<f64>,
}

/// `quantize` restricts a generated patch to a discrete value set by
/// re-optimizing inside the subspace the strategy derives from it.
pub fn quantize(ctx: &Ctx, args: &QuantizeArgs) -> Result<()> {
    let model_path = ctx.path_or(&args.model, "model.json");
    let params = load_model(&model_path)?;
    let patch_path = ctx.path_or(&args.patch, "patch_sync.json");
    let source = load_patch(&patch_path)?;
    let data = ctx.path_or(&args.data, "train.csv");
    let gen_set = ctx.load_dataset(&data, args.period)?;

    let strategy = parse_strategy(&args.strategy)?;
    let subspace = build_subspace(&source, &strategy)?;
    let levels = subspace.levels_mw().to_vec();
    let max_gap = levels
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0f64, f64::max);
    let mut budget = *source.budget();
    budget.alpha = args.step.unwrap_or(if max_gap > 0.0 {
        0.6 * max_gap
    } else {
        budget.alpha
    });

    let quantized = generate_quantized_patch(&gen_set, &params, &budget, &subspace, args.shift_robust)?;
    let out_path = ctx.out.join("patch_quantized.json");
    atomic_via(&out_path, |tmp| Ok(save_patch(&quantized, tmp)?))?;

    let bins = histogram(&source, args.bin)?;
    let rows: Vec<String> = bins
        .iter()
        .map(|b| format!("{},{}", b.center_mw, b.count))
        .collect();
    io::write_csv(&ctx.out.join("histogram.csv"), "center_mw,count", &rows)?;
    write_spectrum(
        ctx,
        "spectrum_quantized.csv",
        quantized.delta(),
        gen_set.sample_period_us(),
    )?;
    println!(
        "wrote {} (levels {:?} mW, step {} mW)",
        out_path.display(),
        levels,
        budget.alpha
    );

    let policy = if args.shift_robust {
        ShiftPolicy::uniform(derive_seed(ctx.seed, "eval-shift"))
    } else {
        ShiftPolicy::none()
    };
    print_eval(ctx, &params, &quantized, &args.eval, args.period, &policy)?;
    ctx.finish(
        "quantize",
        json!({
            "patch": patch_path.display().to_string(),
            "strategy": args.strategy,
            "levels_mw": levels,
            "step_mw": budget.alpha,
            "shift_robust": args.shift_robust,
            "bin_mw": args.bin,
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepModeArg {
    Sync,
    Unsync,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub mode: SweepModeArg,
    /// Budget grid: `start:stop:step` or a comma-separated list, mW.
    #[arg(long)]
    pub eps: String,
    /// Traces used for generation and evaluation; defaults to
    /// `<out>/test.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Class-1 accuracy at or below this counts as evasion, percent.
    #[arg(long, default_value_t = 2.0)]
    pub threshold: f64,
    #[arg(long)]
    pub period: Option<f64>,
}

/// `sweep` generates one patch per budget and records the post-patch
/// accuracy curve, printing the smallest evading budget if any.
pub fn sweep(ctx: &Ctx, args: &SweepArgs) -> Result<()> {
    let model_path = ctx.path_or(&args.model, "model.json");
    let params = load_model(&model_path)?;
    let data = ctx.path_or(&args.data, "test.csv");
    let dataset = ctx.load_dataset(&data, args.period)?;
    let eps = parse_eps(&args.eps)?;
    let (mode, name, default_iters) = match args.mode {
        SweepModeArg::Sync => (SweepMode::Sync, "sync", 200),
        SweepModeArg::Unsync => (SweepMode::Unsync, "unsync", 400),
    };
    let base = budget_for(
        ctx,
        Some(eps[0]),
        args.alpha,
        args.sigma,
        args.iters,
        args.batch,
        default_iters,
    );
    let curve = budget_sweep(&dataset, &params, &base, &eps, mode)?;
    let rows: Vec<String> = curve
        .iter()
        .map(|p| format!("{},{},{}", p.epsilon_mw, p.class0_percent, p.class1_percent))
        .collect();
    let csv = ctx.out.join(format!("sweep_{name}.csv"));
    io::write_csv(&csv, "epsilon_mw,class0_percent,class1_percent", &rows)?;
    println!("wrote {}", csv.display());
    match epsilon_star(&curve, args.threshold) {
        Some(star) => println!("eps_star = {star} mW (class-1 <= {}%)", args.threshold),
        None => println!("no budget on this grid pushes class-1 to <= {}%", args.threshold),
    }
    ctx.finish(
        "sweep",
        json!({
            "mode": name,
            "eps_mw": eps,
            "alpha": base.alpha,
            "sigma_mw": base.sigma_mw,
            "iterations": base.iterations,
            "batch_size": base.batch_size,
            "threshold_percent": args.threshold,
            "data": data.display().to_string(),
        }),
    )
}
