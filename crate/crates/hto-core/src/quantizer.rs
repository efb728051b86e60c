//! Patch value quantization.
//!
//! A hardware implementation can only draw power from a small set of
//! discrete levels, so a deployable patch must take its values from a
//! value subspace. This module analyzes where a full-precision patch
//! concentrates its values, builds a subspace from that analysis, and
//! regenerates patches whose every cycle lies exactly on a level.

use serde::{Deserialize, Serialize};

use crate::attack::{AdversarialPatch, PatchBudget};
use crate::detector::DetectorParams;
use crate::error::{Error, Result};
use crate::traces::TraceDataset;

/// Strictly ascending set of allowed patch values, mW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSubspace {
    levels_mw: Vec<f64>,
}

impl ValueSubspace {
    pub fn new(levels_mw: Vec<f64>) -> Result<Self> {
        if levels_mw.is_empty() {
            return Err(Error::config("a value subspace needs at least one level"));
        }
        if let Some(bad) = levels_mw.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::config(format!("invalid subspace level {bad}")));
        }
        if levels_mw.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("subspace levels must be strictly ascending"));
        }
        Ok(ValueSubspace { levels_mw })
    }

    pub fn levels_mw(&self) -> &[f64] {
        &self.levels_mw
    }

    pub fn len(&self) -> usize {
        self.levels_mw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels_mw.is_empty()
    }

    pub fn max_level_mw(&self) -> f64 {
        *self.levels_mw.last().expect("subspace is nonempty")
    }

    pub fn contains(&self, value: f64) -> bool {
        self.levels_mw.binary_search_by(|l| l.total_cmp(&value)).is_ok()
    }

    /// Nearest level for one value; an exact midpoint resolves to the
    /// larger level, which keeps more adversarial energy in the patch.
    pub fn project_value(&self, value: f64) -> f64 {
        let levels = &self.levels_mw;
        let idx = levels.partition_point(|l| *l < value);
        if idx == 0 {
            return levels[0];
        }
        if idx == levels.len() {
            return levels[idx - 1];
        }
        let (lo, hi) = (levels[idx - 1], levels[idx]);
        if value - lo < hi - value {
            lo
        } else {
            hi
        }
    }

    /// Element-wise nearest-level projection.
    pub fn project(&self, delta: &[f64]) -> Vec<f64> {
        delta.iter().map(|&v| self.project_value(v)).collect()
    }
}

/// Element-wise nearest-level projection onto `s`.
pub fn project(delta: &[f64], s: &ValueSubspace) -> Vec<f64> {
    s.project(delta)
}

/// How to derive a subspace from an observed patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantizationStrategy {
    /// Multiples of `resolution_mw` up to ε; ε itself is appended when
    /// it is not a multiple, so projection error stays within half a
    /// step everywhere in the budget.
    Grid { resolution_mw: f64 },
    /// {0, mean(δ), ε}; collapses to two levels when the mean sits on a
    /// bound.
    ThreeLevel,
    /// {0, ε}: a single switched power consumer.
    TwoLevel,
    /// Centers of the k most populated histogram bins. A patch with
    /// fewer than k occupied bins yields fewer levels.
    TopK { k: usize, bin_width_mw: f64 },
}

impl QuantizationStrategy {
    fn validate(&self) -> Result<()> {
        match *self {
            QuantizationStrategy::Grid { resolution_mw } => {
                if !(resolution_mw.is_finite() && resolution_mw > 0.0) {
                    return Err(Error::config("grid resolution must be > 0"));
                }
            }
            QuantizationStrategy::TopK { k, bin_width_mw } => {
                if k == 0 {
                    return Err(Error::config("top_k needs k >= 1"));
                }
                if !(bin_width_mw.is_finite() && bin_width_mw > 0.0) {
                    return Err(Error::config("top_k bin width must be > 0"));
                }
            }
            QuantizationStrategy::ThreeLevel | QuantizationStrategy::TwoLevel => {}
        }
        Ok(())
    }
}

/// One histogram bin over the patch value range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub center_mw: f64,
    pub count: usize,
}

/// Histogram of patch values over [0, ε] with the given bin width.
/// Every bin is reported, including empty ones; counts sum to the patch
/// length. Values outside [0, ε] (possible for adaptive patches) land
/// in the nearest edge bin.
pub fn histogram(patch: &AdversarialPatch, bin_width_mw: f64) -> Result<Vec<HistogramBin>> {
    if !(bin_width_mw.is_finite() && bin_width_mw > 0.0) {
        return Err(Error::config("histogram bin width must be > 0"));
    }
    let epsilon = patch.budget().epsilon_mw;
    let n_bins = ((epsilon / bin_width_mw).ceil() as usize).max(1);
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|i| HistogramBin {
            center_mw: (i as f64 + 0.5) * bin_width_mw,
            count: 0,
        })
        .collect();
    for &v in patch.delta() {
        let idx = ((v / bin_width_mw).floor().max(0.0) as usize).min(n_bins - 1);
        bins[idx].count += 1;
    }
    Ok(bins)
}

/// Canonical value of grid step `step` at `resolution_mw`. The circuit
/// module reconstructs decoded power through this same expression so
/// grid-valued patches survive emulation bit-identically.
pub(crate) fn grid_value(step: u64, resolution_mw: f64) -> f64 {
    step as f64 * resolution_mw
}

/// Levels that ε/`resolution` induce on [0, ε].
fn grid_levels(epsilon_mw: f64, resolution_mw: f64) -> Vec<f64> {
    let ratio = epsilon_mw / resolution_mw;
    let mut steps = ratio.floor();
    // ε an exact-in-spirit multiple of the resolution counts as one.
    if ratio - steps > 1.0 - 1e-9 {
        steps += 1.0;
    }
    let mut levels: Vec<f64> = (0..=steps as u64)
        .map(|i| grid_value(i, resolution_mw))
        .collect();
    let last = levels.last_mut().expect("grid has at least level 0");
    if *last > epsilon_mw {
        *last = epsilon_mw;
    } else if epsilon_mw - *last > 1e-9 * epsilon_mw.max(1.0) {
        levels.push(epsilon_mw);
    }
    levels
}

/// Build a subspace for `patch` under `strategy`.
pub fn build_subspace(
    patch: &AdversarialPatch,
    strategy: &QuantizationStrategy,
) -> Result<ValueSubspace> {
    strategy.validate()?;
    let epsilon = patch.budget().epsilon_mw;
    let levels = match *strategy {
        QuantizationStrategy::Grid { resolution_mw } => grid_levels(epsilon, resolution_mw),
        QuantizationStrategy::TwoLevel => vec![0.0, epsilon],
        QuantizationStrategy::ThreeLevel => {
            let mean = patch.delta().iter().sum::<f64>() / patch.len() as f64;
            if mean > 0.0 && mean < epsilon {
                vec![0.0, mean, epsilon]
            } else {
                vec![0.0, epsilon]
            }
        }
        QuantizationStrategy::TopK { k, bin_width_mw } => {
            let mut bins = histogram(patch, bin_width_mw)?;
            bins.retain(|b| b.count > 0);
            // Most populated first; equal counts keep ascending centers.
            bins.sort_by(|a, b| b.count.cmp(&a.count).then(a.center_mw.total_cmp(&b.center_mw)));
            let mut levels: Vec<f64> = bins
                .iter()
                .take(k)
                .map(|b| b.center_mw.min(epsilon))
                .collect();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            levels
        }
    };
    ValueSubspace::new(levels)
}

/// Quantized universal patch: the optimization in the attack module
/// with a nearest-level projection after every clip-and-noise step, so
/// the returned values are elements of `subspace` exactly.
pub fn generate_quantized_patch(
    dataset: &TraceDataset,
    params: &DetectorParams,
    budget: &PatchBudget,
    subspace: &ValueSubspace,
    shift_robust: bool,
) -> Result<AdversarialPatch> {
    if subspace.max_level_mw() > budget.epsilon_mw {
        return Err(Error::config(format!(
            "subspace level {} exceeds the budget {}",
            subspace.max_level_mw(),
            budget.epsilon_mw
        )));
    }
    crate::attack::generate_projected_patch(dataset, params, budget, subspace, shift_robust)
}
