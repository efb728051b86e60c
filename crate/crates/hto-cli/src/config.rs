//! Optional JSON config file. Every field is optional; command-line
//! flags override whatever the file provides.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub train_fraction: Option<f64>,
    pub epsilon_mw: Option<f64>,
    pub step_mw: Option<f64>,
    pub noise_mw: Option<f64>,
    pub iterations: Option<usize>,
    pub batch: Option<usize>,
    pub energy: Option<f64>,
    pub period_us: Option<f64>,
    pub emulation_noise_mw: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_fields() {
        let err = serde_json::from_str::<ExperimentConfig>("{\"epsilon\": 3}");
        assert!(err.is_err());
    }

    #[test]
    fn partial_config_parses() {
        let cfg: ExperimentConfig = serde_json::from_str("{\"epsilon_mw\": 3.5}").unwrap();
        assert_eq!(cfg.epsilon_mw, Some(3.5));
        assert_eq!(cfg.seed, None);
    }
}
