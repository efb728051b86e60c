//! Circuit realization: configuration vectors, power emulation, and
//! the end-to-end result table.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use hto_core::attack::{load_patch, ShiftPolicy};
use hto_core::circuit::{
    config_vectors, emulate, end_to_end, fidelity_mse, resource_count, save_vectors, Platform,
};
use hto_core::detector::{accuracy, load_model};
use hto_core::seeds::derive_seed;
use serde_json::json;

use crate::io;

use super::{atomic_via, Ctx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlatformArg {
    Asic,
    FpgaRo,
    FpgaDsp,
}

impl PlatformArg {
    pub fn platform(self) -> Platform {
        match self {
            PlatformArg::Asic => Platform::Asic,
            PlatformArg::FpgaRo => Platform::FpgaRo,
            PlatformArg::FpgaDsp => Platform::FpgaDsp,
        }
    }

    fn name(self) -> &'static str {
        match self {
            PlatformArg::Asic => "asic",
            PlatformArg::FpgaRo => "fpga_ro",
            PlatformArg::FpgaDsp => "fpga_dsp",
        }
    }
}

#[derive(Args)]
pub struct EmulateArgs {
    /// Patch to realize; defaults to `<out>/patch_sync.json`.
    #[arg(long)]
    pub patch: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PlatformArg::Asic)]
    pub platform: PlatformArg,
    /// Measurement noise on the emulated trace, mW.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub period: Option<f64>,
}

/// `emulate` maps a patch to per-cycle configuration vectors and
/// replays them as an emulated power trace.
pub fn run_emulate(ctx: &Ctx, args: &EmulateArgs) -> Result<()> {
    let patch_path = ctx.path_or(&args.patch, "patch_sync.json");
    let patch = load_patch(&patch_path)?;
    let platform = args.platform.platform();
    let name = args.platform.name();

    let vectors = config_vectors(&patch, platform)?;
    let vectors_path = ctx.out.join(format!("vectors_{name}.json"));
    atomic_via(&vectors_path, |tmp| Ok(save_vectors(&vectors, tmp)?))?;

    let sigma = args.sigma.or(ctx.cfg.emulation_noise_mw).unwrap_or(0.0);
    let period = ctx.period_us(args.period);
    let trace = emulate(&vectors, period, sigma, derive_seed(ctx.seed, "emulate"))?;
    let rows: Vec<String> = patch
        .delta()
        .iter()
        .zip(trace.samples())
        .enumerate()
        .map(|(cycle, (target, emulated))| format!("{cycle},{target},{emulated}"))
        .collect();
    io::write_csv(
        &ctx.out.join(format!("emulated_{name}.csv")),
        "cycle,target_mw,emulated_mw",
        &rows,
    )?;

    let mse = fidelity_mse(patch.delta(), trace.samples())?;
    let resources = resource_count(&patch, platform)?;
    println!(
        "wrote {} ({} cycles, {} units, MSE {:.6} mW^2)",
        vectors_path.display(),
        vectors.len(),
        resources,
        mse
    );
    ctx.finish(
        "emulate",
        json!({
            "patch": patch_path.display().to_string(),
            "platform": name,
            "sigma_mw": sigma,
            "mse_mw2": mse,
            "resources": resources,
        }),
    )
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub patch: Option<PathBuf>,
    /// Evaluation traces; defaults to `<out>/test.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PlatformArg::Asic)]
    pub platform: PlatformArg,
    #[arg(long)]
    pub period: Option<f64>,
}

/// `report` runs the full chain (patch -> circuit -> emulated trace ->
/// detector) and writes the one-row result table.
pub fn report(ctx: &Ctx, args: &ReportArgs) -> Result<()> {
    let model_path = ctx.path_or(&args.model, "model.json");
    let params = load_model(&model_path)?;
    let patch_path = ctx.path_or(&args.patch, "patch_sync.json");
    let patch = load_patch(&patch_path)?;
    let data = ctx.path_or(&args.data, "test.csv");
    let dataset = ctx.load_dataset(&data, args.period)?;

    let clean = accuracy(&params, &dataset)?;
    let rep = end_to_end(
        &patch,
        args.platform.platform(),
        &params,
        &dataset,
        &ShiftPolicy::none(),
    )?;
    let clean_ht = clean.ht_percent.unwrap_or(f64::NAN);
    let patched_ht = rep.class1_percent.unwrap_or(f64::NAN);
    let row = format!(
        "{},{},{},{},{}",
        dataset.name(),
        clean_ht,
        rep.resource_count,
        patched_ht,
        patch.budget().epsilon_mw
    );
    io::write_csv(
        &ctx.out.join("report.csv"),
        "dataset,clean_acc,resources,patched_acc,budget",
        &[row],
    )?;
    println!(
        "dataset {}: clean ht {:.1}% -> emulated-patch ht {:.1}% ({} units, MSE {:.6} mW^2)",
        dataset.name(),
        clean_ht,
        patched_ht,
        rep.resource_count,
        rep.mse_mw2
    );
    ctx.finish(
        "report",
        json!({
            "model": model_path.display().to_string(),
            "patch": patch_path.display().to_string(),
            "data": data.display().to_string(),
            "platform": args.platform.name(),
        }),
    )
}
