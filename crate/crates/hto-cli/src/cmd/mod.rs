//! Subcommand implementations. Each command reads its inputs, writes
//! artifacts under the output directory, and refreshes the manifest.

pub mod attack;
pub mod circuit;
pub mod data;
pub mod defend;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hto_core::spectral::BandPassFilter;
use hto_core::traces::TraceDataset;

use crate::config::ExperimentConfig;
use crate::io;

/// Default sample period of the synthetic fixture, microseconds.
pub const DEFAULT_PERIOD_US: f64 = 0.04;

/// Resolved global state shared by every subcommand.
pub struct Ctx {
    pub out: PathBuf,
    pub seed: u64,
    pub cfg: ExperimentConfig,
}

impl Ctx {
    /// `flag` if given, else `<out>/<name>`.
    pub fn path_or(&self, flag: &Option<PathBuf>, name: &str) -> PathBuf {
        flag.clone().unwrap_or_else(|| self.out.join(name))
    }

    pub fn period_us(&self, flag: Option<f64>) -> f64 {
        flag.or(self.cfg.period_us).unwrap_or(DEFAULT_PERIOD_US)
    }

    pub fn load_dataset(&self, path: &Path, period_flag: Option<f64>) -> Result<TraceDataset> {
        hto_core::traces::load_csv(path, self.period_us(period_flag))
            .with_context(|| format!("loading traces from {}", path.display()))
    }

    /// Refresh the manifest after a successful command.
    pub fn finish(&self, command: &str, echo: serde_json::Value) -> Result<()> {
        io::update_manifest(&self.out, self.seed, command, &echo)
    }
}

/// Write through a closure that produces the file, then rename into
/// place so the final path never holds a partial artifact.
pub fn atomic_via(
    path: &Path,
    write: impl FnOnce(&Path) -> Result<()>,
) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| ".".into());
    let tmp = tempfile::NamedTempFile::new_in(&dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    write(tmp.path())?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Budget grid: either `start:stop:step` or a comma-separated list.
pub fn parse_eps(spec: &str) -> Result<Vec<f64>> {
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .with_context(|| format!("bad budget value {s:?}"))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let eps = match parts.as_slice() {
        [_] => spec
            .split(',')
            .map(parse)
            .collect::<Result<Vec<f64>>>()?,
        [start, stop, step] => {
            let (start, stop, step) = (parse(start)?, parse(stop)?, parse(step)?);
            if step <= 0.0 || stop < start {
                bail!("budget range needs stop >= start and step > 0, got {spec:?}");
            }
            let mut eps = Vec::new();
            let mut k = 0u32;
            loop {
                let v = start + f64::from(k) * step;
                if v > stop + 1e-9 * step {
                    break;
                }
                eps.push(v);
                k += 1;
            }
            eps
        }
        _ => bail!("budget spec {spec:?} is neither a list nor start:stop:step"),
    };
    if eps.is_empty() {
        bail!("budget spec {spec:?} produced no values");
    }
    Ok(eps)
}

/// `lo:hi` band in MHz.
pub fn parse_band(spec: &str) -> Result<BandPassFilter> {
    let (lo, hi) = spec
        .split_once(':')
        .with_context(|| format!("band {spec:?} is not lo:hi in MHz"))?;
    let lo: f64 = lo.trim().parse().with_context(|| format!("bad band edge {lo:?}"))?;
    let hi: f64 = hi.trim().parse().with_context(|| format!("bad band edge {hi:?}"))?;
    Ok(BandPassFilter::new(lo * 1e6, hi * 1e6)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eps_range_is_inclusive() {
        assert_eq!(parse_eps("0.5:2:0.5").unwrap(), vec![0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn eps_list_parses() {
        assert_eq!(parse_eps("1,2.5,4").unwrap(), vec![1.0, 2.5, 4.0]);
        assert_eq!(parse_eps("3").unwrap(), vec![3.0]);
    }

    #[test]
    fn eps_rejects_bad_specs() {
        assert!(parse_eps("2:1:0.5").is_err());
        assert!(parse_eps("1:2:0").is_err());
        assert!(parse_eps("1:2").is_err());
        assert!(parse_eps("a,b").is_err());
    }

    #[test]
    fn band_parses_megahertz() {
        let b = parse_band("0.1:0.25").unwrap();
        assert_eq!(b.f_min_hz, 0.1e6);
        assert_eq!(b.f_max_hz, 0.25e6);
        assert!(parse_band("0.25").is_err());
        assert!(parse_band("0.3:0.1").is_err());
    }
}
