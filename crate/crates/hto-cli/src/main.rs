//! `hto`: reproducible power-trace attack/defense experiments.
//!
//! Every subcommand reads and writes artifacts under `--out` and
//! refreshes `manifest.json` there, so a pipeline is a sequence of
//! invocations sharing one output directory and one root seed.

mod cmd;
mod config;
mod io;
mod render;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use cmd::Ctx;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "hto",
    version,
    about = "Power-trace detector, universal adversarial patches, circuit emulation, defenses"
)]
struct Cli {
    /// Root seed; each stage derives its own sub-seed from it. Falls
    /// back to the config file, then $HTO_SEED, then 7.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON config file; explicit flags win over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark dataset.
    Synth(cmd::data::SynthArgs),
    /// Split the dataset and train the detector.
    Train(cmd::data::TrainArgs),
    /// Generate a universal adversarial patch.
    Attack(cmd::attack::AttackArgs),
    /// Restrict a patch to a discrete value set.
    Quantize(cmd::attack::QuantizeArgs),
    /// Realize a patch as configuration vectors and emulate its trace.
    Emulate(cmd::circuit::EmulateArgs),
    /// Defender-side countermeasures.
    Defend {
        #[command(subcommand)]
        command: cmd::defend::DefendCmd,
    },
    /// Accuracy-vs-budget curves and the smallest evading budget.
    Sweep(cmd::attack::SweepArgs),
    /// End-to-end result table (patch -> circuit -> detector).
    Report(cmd::circuit::ReportArgs),
    /// Render a pipeline CSV as a static SVG plot.
    Render(cmd::data::RenderArgs),
}

fn resolve_seed(flag: Option<u64>, cfg: &ExperimentConfig) -> Result<u64> {
    if let Some(seed) = flag.or(cfg.seed) {
        return Ok(seed);
    }
    match std::env::var("HTO_SEED") {
        Ok(text) => text
            .trim()
            .parse::<u64>()
            .with_context(|| format!("HTO_SEED={text:?} is not a u64")),
        Err(std::env::VarError::NotPresent) => Ok(7),
        Err(e) => Err(e).context("reading HTO_SEED"),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let seed = resolve_seed(cli.seed, &cfg)?;
    let out = io::ensure_out_dir(&cli.out)?;
    let ctx = Ctx { out, seed, cfg };
    match &cli.command {
        Command::Synth(args) => cmd::data::synth(&ctx, args),
        Command::Train(args) => cmd::data::run_train(&ctx, args),
        Command::Attack(args) => cmd::attack::attack(&ctx, args),
        Command::Quantize(args) => cmd::attack::quantize(&ctx, args),
        Command::Emulate(args) => cmd::circuit::run_emulate(&ctx, args),
        Command::Defend { command } => match command {
            cmd::defend::DefendCmd::Filter(args) => cmd::defend::filter(&ctx, args),
            cmd::defend::DefendCmd::Advtrain(args) => cmd::defend::advtrain(&ctx, args),
            cmd::defend::DefendCmd::Curve(args) => cmd::defend::curve(&ctx, args),
        },
        Command::Sweep(args) => cmd::attack::sweep(&ctx, args),
        Command::Report(args) => cmd::circuit::report(&ctx, args),
        Command::Render(args) => cmd::data::render(&ctx, args),
    }
}
