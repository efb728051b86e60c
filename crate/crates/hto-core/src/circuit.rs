//! Hardware realization of a power patch.
//!
//! A patch becomes per-cycle configuration vectors that switch discrete
//! power consumers on and off: resistor-loaded transistor cells on an
//! ASIC (0.1 mW quanta arranged as decimal digit rows), ring
//! oscillators or DSP multipliers on an FPGA (1 mW quanta). This module
//! generates the vectors, emulates the power they consume, measures
//! fidelity against the target patch, and accounts hardware resources.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::{evaluate_delta, AdversarialPatch, ShiftPolicy};
use crate::detector::DetectorParams;
use crate::error::{Error, Result};
use crate::quantizer::grid_value;
use crate::traces::{add_measurement_noise, PowerTrace, TraceDataset};

/// Target hardware platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Asic,
    FpgaRo,
    FpgaDsp,
}

impl Platform {
    pub fn model(self) -> PlatformModel {
        match self {
            // Digit-row transistor cells; the finest quantum is 0.1 mW,
            // ten cells per mW.
            Platform::Asic => PlatformModel {
                platform: self,
                resolution_mw: 0.1,
                units_per_mw: 10.0,
            },
            // Two ring oscillators consume about 1 mW.
            Platform::FpgaRo => PlatformModel {
                platform: self,
                resolution_mw: 1.0,
                units_per_mw: 2.0,
            },
            // One DSP block consumes 1 mW per active cycle.
            Platform::FpgaDsp => PlatformModel {
                platform: self,
                resolution_mw: 1.0,
                units_per_mw: 1.0,
            },
        }
    }
}

/// Power granularity and resource cost constants for one platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformModel {
    pub platform: Platform,
    /// Smallest realizable power step, mW.
    pub resolution_mw: f64,
    /// Hardware units (transistor cells, ROs, DSPs) per mW of
    /// consumable power.
    pub units_per_mw: f64,
}

impl PlatformModel {
    fn validate(&self) -> Result<()> {
        if !(self.resolution_mw.is_finite() && self.resolution_mw > 0.0) {
            return Err(Error::config("platform resolution must be > 0"));
        }
        if !(self.units_per_mw.is_finite() && self.units_per_mw > 0.0) {
            return Err(Error::config("units_per_mw must be > 0"));
        }
        Ok(())
    }
}

/// One row of identical power cells sharing a quantum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DigitRow {
    pub power_quantum_mw: f64,
    pub cell_count: usize,
}

/// The consumer network a configuration vector indexes into, largest
/// quantum first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellNetwork {
    digit_rows: Vec<DigitRow>,
}

/// Cells per decimal digit position: digits run 0..=9, so nine cells
/// represent any digit.
const DIGIT_CELLS: usize = 9;

impl CellNetwork {
    pub fn new(digit_rows: Vec<DigitRow>) -> Result<Self> {
        if digit_rows.is_empty() {
            return Err(Error::config("a cell network needs at least one row"));
        }
        for row in &digit_rows {
            if !(row.power_quantum_mw.is_finite() && row.power_quantum_mw > 0.0) {
                return Err(Error::config(format!(
                    "cell power quantum must be > 0, got {}",
                    row.power_quantum_mw
                )));
            }
        }
        if digit_rows
            .windows(2)
            .any(|w| w[0].power_quantum_mw <= w[1].power_quantum_mw)
        {
            return Err(Error::config(
                "digit-row quanta must be strictly decreasing",
            ));
        }
        Ok(CellNetwork { digit_rows })
    }

    /// Network sized for a platform and the largest sample it must
    /// realize. ASIC networks carry units and tenths rows, extended
    /// with a tens row for budgets beyond 9.9 mW; FPGA networks are a
    /// single row of 1 mW cells.
    pub fn for_platform(model: &PlatformModel, max_sample_mw: f64) -> Result<Self> {
        model.validate()?;
        if !(max_sample_mw.is_finite() && max_sample_mw >= 0.0) {
            return Err(Error::config(format!(
                "network sizing needs a finite nonnegative maximum, got {max_sample_mw}"
            )));
        }
        match model.platform {
            Platform::Asic => {
                let mut rows = vec![
                    DigitRow {
                        power_quantum_mw: 1.0,
                        cell_count: DIGIT_CELLS,
                    },
                    DigitRow {
                        power_quantum_mw: 0.1,
                        cell_count: DIGIT_CELLS,
                    },
                ];
                if steps_of(max_sample_mw, model.resolution_mw) > 99 {
                    rows.insert(
                        0,
                        DigitRow {
                            power_quantum_mw: 10.0,
                            cell_count: DIGIT_CELLS,
                        },
                    );
                }
                CellNetwork::new(rows)
            }
            Platform::FpgaRo | Platform::FpgaDsp => {
                let cells = max_sample_mw.ceil() as usize;
                Ok(CellNetwork {
                    digit_rows: vec![DigitRow {
                        power_quantum_mw: 1.0,
                        cell_count: cells,
                    }],
                })
            }
        }
    }

    pub fn digit_rows(&self) -> &[DigitRow] {
        &self.digit_rows
    }

    /// Total bits in one configuration row.
    pub fn width(&self) -> usize {
        self.digit_rows.iter().map(|r| r.cell_count).sum()
    }

    fn finest_quantum_mw(&self) -> f64 {
        self.digit_rows
            .last()
            .expect("network is nonempty")
            .power_quantum_mw
    }

    /// Integer multiplier of each row's quantum over the finest one.
    fn multipliers(&self) -> Vec<u64> {
        let finest = self.finest_quantum_mw();
        self.digit_rows
            .iter()
            .map(|r| (r.power_quantum_mw / finest).round() as u64)
            .collect()
    }

    /// Largest integer step count the network can realize.
    fn capacity_steps(&self) -> u64 {
        self.multipliers()
            .iter()
            .zip(&self.digit_rows)
            .map(|(m, r)| m * r.cell_count as u64)
            .sum()
    }
}

/// Nearest integer number of resolution steps for one sample; an exact
/// midpoint rounds up, matching the quantizer's tie rule.
fn steps_of(value_mw: f64, resolution_mw: f64) -> u64 {
    (value_mw / resolution_mw).round().max(0.0) as u64
}

/// Per-cycle cell on/off assignments for a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigurationVectors {
    platform: Platform,
    network: CellNetwork,
    rows: Vec<Vec<u8>>,
}

impl ConfigurationVectors {
    pub fn new(platform: Platform, network: CellNetwork, rows: Vec<Vec<u8>>) -> Result<Self> {
        let width = network.width();
        for (cycle, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::shape(format!(
                    "configuration row {cycle} has {} bits, the network has {width} cells",
                    row.len()
                )));
            }
            if row.iter().any(|b| *b > 1) {
                return Err(Error::config(format!(
                    "configuration row {cycle} contains a non-binary cell state"
                )));
            }
            // Thermometer code within each digit segment: a set bit never
            // follows a cleared one.
            let mut offset = 0;
            for digit_row in &network.digit_rows {
                let segment = &row[offset..offset + digit_row.cell_count];
                if segment.windows(2).any(|w| w[0] < w[1]) {
                    return Err(Error::config(format!(
                        "configuration row {cycle} is not thermometer-coded"
                    )));
                }
                offset += digit_row.cell_count;
            }
        }
        Ok(ConfigurationVectors {
            platform,
            network,
            rows,
        })
    }

    pub fn platform(&self) -> Platform {
        self.platform
    }

    pub fn network(&self) -> &CellNetwork {
        &self.network
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Decompose each patch sample into thermometer-coded digit rows at the
/// platform's resolution. Greedy decomposition over nine-cell decimal
/// rows reproduces the decimal digits of the step count.
pub fn config_vectors(
    patch: &AdversarialPatch,
    platform: Platform,
) -> Result<ConfigurationVectors> {
    vectors_for(patch.delta(), platform)
}

/// [`config_vectors`] for a raw power vector.
pub fn vectors_for(delta: &[f64], platform: Platform) -> Result<ConfigurationVectors> {
    let model = platform.model();
    if let Some(&bad) = delta.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::config(format!(
            "configuration vectors need finite nonnegative power, got {bad}"
        )));
    }
    let max = delta.iter().fold(0.0f64, |m, &v| m.max(v));
    let network = CellNetwork::for_platform(&model, max)?;
    let multipliers = network.multipliers();
    let capacity = network.capacity_steps();
    let mut rows = Vec::with_capacity(delta.len());
    for (cycle, &v) in delta.iter().enumerate() {
        let mut remaining = steps_of(v, model.resolution_mw);
        if remaining > capacity {
            return Err(Error::Capacity {
                cycle,
                message: format!(
                    "{v} mW needs {remaining} steps, the {} network realizes {capacity}",
                    platform_name(platform)
                ),
            });
        }
        let mut row = Vec::with_capacity(network.width());
        for (digit_row, &m) in network.digit_rows.iter().zip(&multipliers) {
            let digit = (remaining / m).min(digit_row.cell_count as u64);
            remaining -= digit * m;
            for j in 0..digit_row.cell_count as u64 {
                row.push(u8::from(j < digit));
            }
        }
        debug_assert_eq!(remaining, 0);
        rows.push(row);
    }
    ConfigurationVectors::new(platform, network, rows)
}

fn platform_name(platform: Platform) -> &'static str {
    match platform {
        Platform::Asic => "asic",
        Platform::FpgaRo => "fpga_ro",
        Platform::FpgaDsp => "fpga_dsp",
    }
}

/// Power each cycle's active cells consume, reconstructed through the
/// quantizer's canonical grid expression so grid-valued patches decode
/// bit-identically.
pub fn decode(vectors: &ConfigurationVectors) -> Vec<f64> {
    let finest = vectors.network.finest_quantum_mw();
    let multipliers = vectors.network.multipliers();
    vectors
        .rows
        .iter()
        .map(|row| {
            let mut steps = 0u64;
            let mut offset = 0;
            for (digit_row, &m) in vectors.network.digit_rows.iter().zip(&multipliers) {
                let on = row[offset..offset + digit_row.cell_count]
                    .iter()
                    .filter(|b| **b == 1)
                    .count() as u64;
                steps += on * m;
                offset += digit_row.cell_count;
            }
            grid_value(steps, finest)
        })
        .collect()
}

/// Nearest-grid quantization at `resolution_mw`; the reference the
/// decode path must reproduce exactly.
pub fn quantize_to_grid(values: &[f64], resolution_mw: f64) -> Result<Vec<f64>> {
    if !(resolution_mw.is_finite() && resolution_mw > 0.0) {
        return Err(Error::config("grid resolution must be > 0"));
    }
    if let Some(&bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::config(format!(
            "grid quantization needs finite nonnegative values, got {bad}"
        )));
    }
    Ok(values
        .iter()
        .map(|&v| grid_value(steps_of(v, resolution_mw), resolution_mw))
        .collect())
}

/// Emulate the trace the configured network consumes, with optional
/// Gaussian measurement noise (clamped at zero, deterministic per
/// seed).
pub fn emulate(
    vectors: &ConfigurationVectors,
    sample_period_us: f64,
    measurement_sigma_mw: f64,
    seed: u64,
) -> Result<PowerTrace> {
    let trace = PowerTrace::new(decode(vectors), sample_period_us)?;
    add_measurement_noise(&trace, measurement_sigma_mw, seed)
}

/// Mean squared error between a target patch and its emulation, mW².
pub fn fidelity_mse(target_mw: &[f64], emulated_mw: &[f64]) -> Result<f64> {
    if target_mw.len() != emulated_mw.len() {
        return Err(Error::shape(format!(
            "fidelity compares {} target samples against {} emulated",
            target_mw.len(),
            emulated_mw.len()
        )));
    }
    if target_mw.is_empty() {
        return Err(Error::shape("fidelity of empty traces"));
    }
    let sum: f64 = target_mw
        .iter()
        .zip(emulated_mw)
        .map(|(t, e)|(t - e) * (t - e))
        .sum();
    Ok(sum / target_mw.len() as f64)
}

/// Hardware units the patch needs. FPGA platforms pay per mW of peak
/// power (two ROs or one DSP per mW); an ASIC pays one transistor cell
/// per decimal digit unit, summed over the largest digit seen at each
/// position across the whole patch.
pub fn resource_count(patch: &AdversarialPatch, platform: Platform) -> Result<u64> {
    resources_for(patch.delta(), platform)
}

/// [`resource_count`] for a raw power vector.
pub fn resources_for(delta: &[f64], platform: Platform) -> Result<u64> {
    let vectors = vectors_for(delta, platform)?;
    let model = platform.model();
    match platform {
        Platform::Asic => {
            let n_rows = vectors.network.digit_rows().len();
            let mut max_digits = vec![0u64; n_rows];
            for row in &vectors.rows {
                let mut offset = 0;
                for (i, digit_row) in vectors.network.digit_rows.iter().enumerate() {
                    let on = row[offset..offset + digit_row.cell_count]
                        .iter()
                        .filter(|b| **b == 1)
                        .count() as u64;
                    max_digits[i] = max_digits[i].max(on);
                    offset += digit_row.cell_count;
                }
            }
            Ok(max_digits.iter().sum())
        }
        Platform::FpgaRo | Platform::FpgaDsp => {
            let max = delta.iter().fold(0.0f64, |m, &v| m.max(v));
            Ok((model.units_per_mw * max.ceil()).round() as u64)
        }
    }
}

/// Ring-oscillator frequency for an odd inverter chain: 1/(2nτ).
pub fn ro_frequency(n_inverters: u32, tau_s: f64) -> Result<f64> {
    if n_inverters == 0 || n_inverters % 2 == 0 {
        return Err(Error::config(format!(
            "a ring oscillator needs an odd number of inverters, got {n_inverters}"
        )));
    }
    if !(tau_s.is_finite() && tau_s > 0.0) {
        return Err(Error::config("inverter delay must be > 0"));
    }
    Ok(1.0 / (2.0 * f64::from(n_inverters) * tau_s))
}

/// End-to-end outcome of realizing one patch on one platform.
#[derive(Debug, Clone, PartialEq)]
pub struct HTOReport {
    pub platform: Platform,
    pub target_mw: Vec<f64>,
    pub emulated: PowerTrace,
    pub mse_mw2: f64,
    pub resource_count: u64,
    pub class0_percent: Option<f64>,
    pub class1_percent: Option<f64>,
}

/// Realize `patch` on `platform` (noiseless), then evaluate the
/// detector on `dataset` with the emulated trace as the effective
/// patch.
pub fn end_to_end(
    patch: &AdversarialPatch,
    platform: Platform,
    params: &DetectorParams,
    dataset: &TraceDataset,
    policy: &ShiftPolicy,
) -> Result<HTOReport> {
    let vectors = config_vectors(patch, platform)?;
    let emulated = emulate(&vectors, dataset.sample_period_us(), 0.0, 0)?;
    let mse = fidelity_mse(patch.delta(), emulated.samples())?;
    let resources = resource_count(patch, platform)?;
    let accuracy = evaluate_delta(params, dataset, emulated.samples(), policy, None)?;
    Ok(HTOReport {
        platform,
        target_mw: patch.delta().to_vec(),
        emulated,
        mse_mw2: mse,
        resource_count: resources,
        class0_percent: accuracy.benign_percent,
        class1_percent: accuracy.ht_percent,
    })
}

#[derive(Serialize, Deserialize)]
struct VectorsFile {
    platform: Platform,
    digit_rows: Vec<DigitRowFile>,
    rows: Vec<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
struct DigitRowFile {
    quantum_mw: f64,
    cells: usize,
}

/// Write configuration vectors as JSON; row order is cycle order.
pub fn save_vectors(vectors: &ConfigurationVectors, path: impl AsRef<Path>) -> Result<()> {
    let file = VectorsFile {
        platform: vectors.platform,
        digit_rows: vectors
            .network
            .digit_rows
            .iter()
            .map(|r| DigitRowFile {
                quantum_mw: r.power_quantum_mw,
                cells: r.cell_count,
            })
            .collect(),
        rows: vectors.rows.clone(),
    };
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer(&mut w, &file).map_err(crate::detector::json_err)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Load configuration vectors written by [`save_vectors`],
/// re-validating widths and thermometer coding.
pub fn load_vectors(path: impl AsRef<Path>) -> Result<ConfigurationVectors> {
    let r = BufReader::new(File::open(path.as_ref())?);
    let file: VectorsFile = serde_json::from_reader(r).map_err(crate::detector::json_err)?;
    let network = CellNetwork::new(
        file.digit_rows
            .into_iter()
            .map(|r| DigitRow {
                power_quantum_mw: r.quantum_mw,
                cell_count: r.cells,
            })
            .collect(),
    )?;
    ConfigurationVectors::new(file.platform, network, file.rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{PatchBudget, PatchKind};
    use crate::detector::{ArchitectureSpec, ConvSpec};
    use crate::quantizer::{build_subspace, QuantizationStrategy};
    use crate::traces::{synth_dataset, SynthConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn patch_of(values: Vec<f64>, epsilon_mw: f64) -> AdversarialPatch {
        let budget = PatchBudget {
            epsilon_mw,
            alpha: 0.01,
            sigma_mw: 0.0,
            iterations: 1,
            batch_size: 1,
            seed: 0,
        };
        AdversarialPatch::new(values, budget, PatchKind::Sync, None, None).unwrap()
    }

    #[test]
    fn asic_digit_rows_for_1_2_mw() {
        let patch = patch_of(vec![1.2, 0.0, 0.3, 2.0, 1.2, 0.7, 0.0, 0.1], 3.0);
        let v = config_vectors(&patch, Platform::Asic).unwrap();
        assert_eq!(v.network().digit_rows().len(), 2);
        assert_eq!(v.network().width(), 18);
        let row = &v.rows()[0];
        let mut expected = vec![1, 0, 0, 0, 0, 0, 0, 0, 0];
        expected.extend([1, 1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(row, &expected);
        assert!(v.rows()[1].iter().all(|b| *b == 0));
    }

    #[test]
    fn thermometer_holds_on_random_patches() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for platform in [Platform::Asic, Platform::FpgaRo, Platform::FpgaDsp] {
            for _ in 0..20 {
                let values: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..5.0)).collect();
                let v = vectors_for(&values, platform).unwrap();
                for row in v.rows() {
                    let mut offset = 0;
                    for digit_row in v.network().digit_rows() {
                        let seg = &row[offset..offset + digit_row.cell_count];
                        assert!(seg.windows(2).all(|w| w[0] >= w[1]));
                        offset += digit_row.cell_count;
                    }
                }
            }
        }
    }

    #[test]
    fn decode_equals_grid_quantization_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for platform in [Platform::Asic, Platform::FpgaRo, Platform::FpgaDsp] {
            let res = platform.model().resolution_mw;
            for _ in 0..50 {
                let values: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..8.0)).collect();
                let decoded = decode(&vectors_for(&values, platform).unwrap());
                let quantized = quantize_to_grid(&values, res).unwrap();
                assert!(decoded
                    .iter()
                    .zip(&quantized)
                    .all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn decode_matches_bits_times_quantum_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let values: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..9.9)).collect();
        let v = vectors_for(&values, Platform::Asic).unwrap();
        let decoded = decode(&v);
        for (row, dec) in v.rows().iter().zip(&decoded) {
            let mut oracle = 0.0;
            let mut offset = 0;
            for digit_row in v.network().digit_rows() {
                for &bit in &row[offset..offset + digit_row.cell_count] {
                    oracle += f64::from(bit) * digit_row.power_quantum_mw;
                }
                offset += digit_row.cell_count;
            }
            assert!((oracle - dec).abs() <= 1e-12, "oracle {oracle} vs {dec}");
        }
    }

    #[test]
    fn zero_sample_gives_all_zero_row_and_zero_trace() {
        let patch = patch_of(vec![0.0; 8], 1.0);
        for platform in [Platform::Asic, Platform::FpgaRo] {
            let v = config_vectors(&patch, platform).unwrap();
            assert!(v.rows().iter().all(|r| r.iter().all(|b| *b == 0)));
            let trace = emulate(&v, 0.04, 0.0, 0).unwrap();
            assert!(trace.samples().iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn asic_extends_with_tens_row_and_reports_capacity_overflow() {
        let big = patch_of(vec![12.3, 0.0, 45.6, 0.0, 0.0, 0.0, 0.0, 99.9], 100.0);
        let v = config_vectors(&big, Platform::Asic).unwrap();
        assert_eq!(v.network().digit_rows().len(), 3);
        assert_eq!(v.network().digit_rows()[0].power_quantum_mw, 10.0);
        let decoded = decode(&v);
        assert!((decoded[0] - 12.3).abs() < 1e-9);
        assert!((decoded[2] - 45.6).abs() < 1e-9);
        assert!((decoded[7] - 99.9).abs() < 1e-9);

        let over = patch_of(vec![0.0, 0.0, 150.0, 0.0, 0.0, 0.0, 0.0, 0.0], 200.0);
        match config_vectors(&over, Platform::Asic) {
            Err(Error::Capacity { cycle, .. }) => assert_eq!(cycle, 2),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn asic_emulation_of_grid_patch_is_exact() {
        let ds_period = 0.04;
        let levels = build_subspace(
            &patch_of(vec![0.0; 8], 2.0),
            &QuantizationStrategy::Grid { resolution_mw: 0.1 },
        )
        .unwrap();
        // Every level of the 0.1 grid below an integer budget survives
        // the configure/emulate round trip bit-identically.
        let values: Vec<f64> = levels.levels_mw().iter().copied().take(8).collect();
        let patch = patch_of(values.clone(), 2.0);
        let v = config_vectors(&patch, Platform::Asic).unwrap();
        let trace = emulate(&v, ds_period, 0.0, 0).unwrap();
        assert!(values
            .iter()
            .zip(trace.samples())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(fidelity_mse(&values, trace.samples()).unwrap(), 0.0);
    }

    #[test]
    fn fpga_rounding_error_is_within_half_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..4.0)).collect();
        let v = vectors_for(&values, Platform::FpgaDsp).unwrap();
        let trace = emulate(&v, 0.04, 0.0, 0).unwrap();
        for (t, e) in values.iter().zip(trace.samples()) {
            assert!((t - e).abs() <= 0.5 + 1e-12);
        }
        assert!(fidelity_mse(&values, trace.samples()).unwrap() <= 0.25);
    }

    #[test]
    fn asic_mse_is_within_grid_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..3.0)).collect();
        let v = vectors_for(&values, Platform::Asic).unwrap();
        let trace = emulate(&v, 0.04, 0.0, 0).unwrap();
        assert!(fidelity_mse(&values, trace.samples()).unwrap() <= 0.0025);
    }

    #[test]
    fn noisy_emulation_is_deterministic_and_nonnegative() {
        let patch = patch_of(vec![0.4, 1.9, 0.0, 0.2, 2.0, 0.1, 0.0, 1.1], 2.0);
        let v = config_vectors(&patch, Platform::Asic).unwrap();
        let a = emulate(&v, 0.04, 0.3, 5).unwrap();
        let b = emulate(&v, 0.04, 0.3, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.samples().iter().all(|&s| s >= 0.0));
        let c = emulate(&v, 0.04, 0.3, 6).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn fidelity_rejects_mismatched_lengths() {
        assert!(matches!(
            fidelity_mse(&[1.0, 2.0], &[1.0]),
            Err(Error::Shape(_))
        ));
        assert_eq!(fidelity_mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((fidelity_mse(&[1.0, 2.0], &[1.5, 1.5]).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn resource_counts_match_platform_rules() {
        let budget_1 = patch_of(vec![1.0, 0.3, 0.0, 0.9, 1.0, 0.2, 0.0, 0.5], 1.0);
        let budget_2 = patch_of(vec![2.0, 0.3, 0.0, 1.9, 1.0, 0.2, 0.0, 0.5], 2.0);
        assert_eq!(resource_count(&budget_1, Platform::FpgaRo).unwrap(), 2);
        assert_eq!(resource_count(&budget_2, Platform::FpgaRo).unwrap(), 4);
        assert_eq!(resource_count(&budget_1, Platform::FpgaDsp).unwrap(), 1);
        assert_eq!(resource_count(&budget_2, Platform::FpgaDsp).unwrap(), 2);

        let point_6 = patch_of(vec![0.6, 0.2, 0.0, 0.4, 0.6, 0.1, 0.0, 0.3], 0.6);
        assert_eq!(resource_count(&point_6, Platform::Asic).unwrap(), 6);
        // 1.2 needs one units cell and up to nine tenths cells across
        // samples; here max tenths digit is 9 (0.9) and max units 1.
        let mixed = patch_of(vec![1.2, 0.9, 0.0, 0.4, 1.0, 0.1, 0.0, 0.3], 1.2);
        assert_eq!(resource_count(&mixed, Platform::Asic).unwrap(), 1 + 9);
        let zero = patch_of(vec![0.0; 8], 1.0);
        for p in [Platform::Asic, Platform::FpgaRo, Platform::FpgaDsp] {
            assert_eq!(resource_count(&zero, p).unwrap(), 0);
        }
    }

    #[test]
    fn ro_frequency_formula() {
        assert_eq!(ro_frequency(1, 1.0).unwrap(), 0.5);
        let f3 = ro_frequency(3, 1e-10).unwrap();
        assert!((f3 - 1.0 / 6e-10).abs() / f3 < 1e-12);
        let doubled = ro_frequency(3, 2e-10).unwrap();
        assert!((f3 / doubled - 2.0).abs() < 1e-12);
        assert!(matches!(ro_frequency(2, 1.0), Err(Error::Config(_))));
        assert!(matches!(ro_frequency(0, 1.0), Err(Error::Config(_))));
        assert!(ro_frequency(3, 0.0).is_err());
    }

    #[test]
    fn end_to_end_zero_patch_reports_clean_accuracy() {
        let ds = synth_dataset(&SynthConfig {
            d: 32,
            n_per_class: 10,
            n_rounds: 2,
            ht_bump_width: 6,
            ..SynthConfig::default()
        })
        .unwrap();
        let arch = ArchitectureSpec {
            convs: vec![ConvSpec {
                out_channels: 2,
                kernel: 5,
                stride: 2,
            }],
            hidden: 4,
        };
        let params = DetectorParams::init(arch, ds.d(), 21).unwrap();
        let zero = patch_of(vec![0.0; 32], 1.0);
        let report =
            end_to_end(&zero, Platform::Asic, &params, &ds, &ShiftPolicy::none()).unwrap();
        let clean = crate::detector::accuracy(&params, &ds).unwrap();
        assert_eq!(report.class0_percent, clean.benign_percent);
        assert_eq!(report.class1_percent, clean.ht_percent);
        assert_eq!(report.mse_mw2, 0.0);
        assert_eq!(report.resource_count, 0);
        let again =
            end_to_end(&zero, Platform::Asic, &params, &ds, &ShiftPolicy::none()).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn vectors_file_round_trip_and_validation() {
        let patch = patch_of(vec![1.2, 0.0, 0.3, 2.0, 1.2, 0.7, 0.0, 0.1], 3.0);
        let v = config_vectors(&patch, Platform::Asic).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.json");
        save_vectors(&v, &path).unwrap();
        let loaded = load_vectors(&path).unwrap();
        assert_eq!(loaded, v);

        // Breaking the thermometer code must be caught on load.
        let text = std::fs::read_to_string(&path).unwrap();
        let broken = text.replacen("[1,1,0", "[1,0,1", 1);
        assert_ne!(text, broken);
        std::fs::write(&path, broken).unwrap();
        assert!(matches!(load_vectors(&path), Err(Error::Config(_))));
        std::fs::write(&path, "{").unwrap();
        assert!(matches!(load_vectors(&path), Err(Error::Parse { .. })));
    }
}
