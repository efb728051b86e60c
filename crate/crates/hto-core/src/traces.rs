//! Power-trace data types, synthetic dataset generation, and CSV I/O.
//!
//! A trace is a fixed-length vector of instantaneous power samples in mW.
//! Datasets pair traces with a binary label: class 0 for benign circuits,
//! class 1 for Trojan-inserted ones. Since no public capture corpus ships
//! with this toolkit, [`synth_dataset`] produces a parameterized synthetic
//! stand-in; [`load_csv`] ingests real captures in the documented format.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Minimum number of samples per trace.
pub const MIN_TRACE_LEN: usize = 8;

/// Default sampling period when none is known (0.04 µs = 25 MS/s).
pub const DEFAULT_SAMPLE_PERIOD_US: f64 = 0.04;

/// Binary class of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// Class 0: benign circuit.
    Benign,
    /// Class 1: hardware-Trojan inserted.
    Ht,
}

impl Label {
    pub fn class_id(self) -> u8 {
        match self {
            Label::Benign => 0,
            Label::Ht => 1,
        }
    }

    pub fn from_class_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Label::Benign),
            1 => Some(Label::Ht),
            _ => None,
        }
    }
}

/// A fixed-length vector of instantaneous power samples in mW.
///
/// Samples are finite and nonnegative; negative instantaneous power has
/// no physical meaning, so every operation that could produce one clamps
/// at zero instead.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    samples: Vec<f64>,
    sample_period_us: f64,
}

impl PowerTrace {
    pub fn new(samples: Vec<f64>, sample_period_us: f64) -> Result<Self> {
        if samples.len() < MIN_TRACE_LEN {
            return Err(Error::shape(format!(
                "trace length {} is below the minimum of {MIN_TRACE_LEN}",
                samples.len()
            )));
        }
        if !(sample_period_us.is_finite() && sample_period_us > 0.0) {
            return Err(Error::config(format!(
                "sample period must be a positive finite number of µs, got {sample_period_us}"
            )));
        }
        if let Some((i, &bad)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || **s < 0.0)
        {
            return Err(Error::config(format!(
                "sample {i} = {bad} is not a finite nonnegative power value"
            )));
        }
        Ok(PowerTrace {
            samples,
            sample_period_us,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_period_us(&self) -> f64 {
        self.sample_period_us
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// A power trace together with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrace {
    pub trace: PowerTrace,
    pub label: Label,
}

/// A named collection of labeled traces of uniform length.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDataset {
    items: Vec<LabeledTrace>,
    name: String,
    d: usize,
    sample_period_us: f64,
}

impl TraceDataset {
    pub fn new(items: Vec<LabeledTrace>, name: impl Into<String>) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::config("dataset must contain at least one trace"))?;
        let d = first.trace.len();
        let sample_period_us = first.trace.sample_period_us();
        for (i, item) in items.iter().enumerate() {
            if item.trace.len() != d {
                return Err(Error::shape(format!(
                    "trace {i} has length {}, expected {d}",
                    item.trace.len()
                )));
            }
            if item.trace.sample_period_us() != sample_period_us {
                return Err(Error::config(format!(
                    "trace {i} has sample period {} µs, expected {sample_period_us} µs",
                    item.trace.sample_period_us()
                )));
            }
        }
        Ok(TraceDataset {
            items,
            name: name.into(),
            d,
            sample_period_us,
        })
    }

    pub fn items(&self) -> &[LabeledTrace] {
        &self.items
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Sample count per trace.
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sample_period_us(&self) -> f64 {
        self.sample_period_us
    }

    pub fn count(&self, label: Label) -> usize {
        self.items.iter().filter(|it| it.label == label).count()
    }

    pub fn has_both_classes(&self) -> bool {
        self.count(Label::Benign) > 0 && self.count(Label::Ht) > 0
    }

    /// Traces of one class, in dataset order.
    pub fn traces_of(&self, label: Label) -> Vec<&PowerTrace> {
        self.items
            .iter()
            .filter(|it| it.label == label)
            .map(|it| &it.trace)
            .collect()
    }
}

/// Parameters of the synthetic trace generator.
///
/// Benign traces are a periodic train of raised-cosine activity bursts
/// plus Gaussian measurement noise; Trojan traces additionally carry a
/// localized rectangular power bump at a pseudo-random offset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Samples per trace.
    pub d: usize,
    /// Traces generated per class.
    pub n_per_class: usize,
    /// Peak height of each activity burst, mW.
    pub base_amplitude_mw: f64,
    /// Bursts per trace.
    pub n_rounds: usize,
    /// Height of the Trojan power bump, mW (0 disables it).
    pub ht_bump_mw: f64,
    /// Width of the Trojan bump in samples.
    pub ht_bump_width: usize,
    /// Standard deviation of the additive Gaussian noise, mW.
    pub noise_sigma_mw: f64,
    /// Sampling period, µs.
    pub sample_period_us: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            d: 1000,
            n_per_class: 500,
            base_amplitude_mw: 10.0,
            n_rounds: 10,
            ht_bump_mw: 0.8,
            ht_bump_width: 50,
            noise_sigma_mw: 0.2,
            sample_period_us: DEFAULT_SAMPLE_PERIOD_US,
            seed: 7,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.d < MIN_TRACE_LEN {
            return Err(Error::config(format!(
                "d = {} is below the minimum trace length {MIN_TRACE_LEN}",
                self.d
            )));
        }
        if self.n_per_class == 0 {
            return Err(Error::config("n_per_class must be at least 1"));
        }
        if !(self.base_amplitude_mw.is_finite() && self.base_amplitude_mw > 0.0) {
            return Err(Error::config("base_amplitude_mw must be > 0"));
        }
        if self.n_rounds == 0 {
            return Err(Error::config("n_rounds must be at least 1"));
        }
        // ht_bump_mw == 0 is allowed: it collapses both classes onto the
        // same population, which is useful as a null fixture.
        if !(self.ht_bump_mw.is_finite() && self.ht_bump_mw >= 0.0) {
            return Err(Error::config("ht_bump_mw must be a finite value >= 0"));
        }
        if self.ht_bump_width == 0 || self.ht_bump_width >= self.d {
            return Err(Error::config(format!(
                "ht_bump_width = {} must be in [1, d-1]",
                self.ht_bump_width
            )));
        }
        if !(self.noise_sigma_mw.is_finite() && self.noise_sigma_mw >= 0.0) {
            return Err(Error::config("noise_sigma_mw must be >= 0"));
        }
        if !(self.sample_period_us.is_finite() && self.sample_period_us > 0.0) {
            return Err(Error::config("sample_period_us must be > 0"));
        }
        Ok(())
    }
}

/// Generate a labeled synthetic dataset: `n_per_class` benign traces
/// followed by `n_per_class` Trojan traces. Fully deterministic given
/// `config.seed`.
pub fn synth_dataset(config: &SynthConfig) -> Result<TraceDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = gaussian(config.noise_sigma_mw)?;
    let period = config.d as f64 / config.n_rounds as f64;

    let mut items = Vec::with_capacity(2 * config.n_per_class);
    for label in [Label::Benign, Label::Ht] {
        for _ in 0..config.n_per_class {
            let bump_offset = match label {
                Label::Benign => 0,
                Label::Ht => rng.gen_range(0..=config.d - config.ht_bump_width),
            };
            let mut samples = Vec::with_capacity(config.d);
            for n in 0..config.d {
                let phase = 2.0 * std::f64::consts::PI * n as f64 / period;
                let mut v = 0.5 * config.base_amplitude_mw * (1.0 - phase.cos());
                if let Some(noise) = &noise {
                    v += noise.sample(&mut rng);
                }
                if label == Label::Ht
                    && n >= bump_offset
                    && n < bump_offset + config.ht_bump_width
                {
                    v += config.ht_bump_mw;
                }
                samples.push(v.max(0.0));
            }
            items.push(LabeledTrace {
                trace: PowerTrace::new(samples, config.sample_period_us)?,
                label,
            });
        }
    }
    TraceDataset::new(items, "synthetic")
}

fn gaussian(sigma: f64) -> Result<Option<Normal<f64>>> {
    if sigma == 0.0 {
        return Ok(None);
    }
    Normal::new(0.0, sigma)
        .map(Some)
        .map_err(|e| Error::config(format!("invalid noise sigma {sigma}: {e}")))
}

/// Add i.i.d. Gaussian measurement noise to each sample, clamping the
/// result at zero. `sigma = 0` returns the input unchanged.
pub fn add_measurement_noise(trace: &PowerTrace, sigma: f64, seed: u64) -> Result<PowerTrace> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let Some(noise) = gaussian(sigma)? else {
        return Ok(trace.clone());
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = trace
        .samples()
        .iter()
        .map(|&s| (s + noise.sample(&mut rng)).max(0.0))
        .collect();
    PowerTrace::new(samples, trace.sample_period_us())
}

/// Deterministic stratified split into (train, test).
///
/// Each class is shuffled with its own slice of the seeded stream and
/// divided so per-class proportions match `train_fraction` within
/// rounding. Selected indices are re-sorted so both halves preserve the
/// original dataset order.
pub fn split(
    dataset: &TraceDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(TraceDataset, TraceDataset)> {
    if !(train_fraction.is_finite() && 0.0 < train_fraction && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train_fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for label in [Label::Benign, Label::Ht] {
        let mut idx: Vec<usize> = dataset
            .items()
            .iter()
            .enumerate()
            .filter(|(_, it)| it.label == label)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let take = ((n as f64 * train_fraction).round() as usize).clamp(
            usize::from(n >= 2),
            n - usize::from(n >= 2),
        );
        train_idx.extend_from_slice(&idx[..take]);
        test_idx.extend_from_slice(&idx[take..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize], suffix: &str| -> Result<TraceDataset> {
        let items = idx.iter().map(|&i| dataset.items()[i].clone()).collect();
        TraceDataset::new(items, format!("{}-{suffix}", dataset.name()))
    };
    Ok((pick(&train_idx, "train")?, pick(&test_idx, "test")?))
}

/// Write the dataset in the documented CSV format.
///
/// Header `label,s0,...,s{d-1}`, one row per trace, label first, then
/// each sample formatted with Rust's shortest round-trip notation, LF
/// line endings.
pub fn save_csv(dataset: &TraceDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("label");
    for i in 0..dataset.d() {
        write!(header, ",s{i}").expect("write to string");
    }
    header.push('\n');
    w.write_all(header.as_bytes())?;
    let mut line = String::new();
    for item in dataset.items() {
        line.clear();
        write!(line, "{}", item.label.class_id()).expect("write to string");
        for &s in item.trace.samples() {
            write!(line, ",{s}").expect("write to string");
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Load a dataset from the documented CSV format.
///
/// The sample period is not part of the file format and must be supplied
/// by the caller. Rows of inconsistent length, non-numeric cells, and
/// labels other than 0/1 are rejected with the offending 1-based row
/// number (the header is row 1).
pub fn load_csv(path: impl AsRef<Path>, sample_period_us: f64) -> Result<TraceDataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();

    let header = lines
        .next()
        .ok_or_else(|| Error::Parse {
            row: 1,
            message: "file is empty, expected a header row".into(),
        })??;
    let d = parse_header(&header)?;

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());

    let mut items = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap_or_default();
        let label = label_field
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Label::from_class_id)
            .ok_or_else(|| Error::Parse {
                row,
                message: format!("label '{label_field}' is not 0 or 1"),
            })?;
        let mut samples = Vec::with_capacity(d);
        for field in fields {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row,
                message: format!("non-numeric sample '{field}'"),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parse {
                    row,
                    message: format!("sample {v} is not a finite nonnegative power value"),
                });
            }
            samples.push(v);
        }
        if samples.len() != d {
            return Err(Error::Parse {
                row,
                message: format!("row has {} samples, expected {d}", samples.len()),
            });
        }
        items.push(LabeledTrace {
            trace: PowerTrace::new(samples, sample_period_us)?,
            label,
        });
    }
    TraceDataset::new(items, name)
}

fn parse_header(header: &str) -> Result<usize> {
    let mut fields = header.split(',');
    if fields.next().map(str::trim) != Some("label") {
        return Err(Error::Parse {
            row: 1,
            message: "header must start with 'label'".into(),
        });
    }
    let mut d = 0usize;
    for field in fields {
        let expected = format!("s{d}");
        if field.trim() != expected {
            return Err(Error::Parse {
                row: 1,
                message: format!("expected header column '{expected}', found '{field}'"),
            });
        }
        d += 1;
    }
    if d < MIN_TRACE_LEN {
        return Err(Error::Parse {
            row: 1,
            message: format!("header declares {d} samples, minimum is {MIN_TRACE_LEN}"),
        });
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        SynthConfig {
            d: 64,
            n_per_class: 10,
            n_rounds: 4,
            ht_bump_width: 8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = small_config();
        let a = synth_dataset(&cfg).unwrap();
        let b = synth_dataset(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synth_rejects_invalid_config() {
        let mut cfg = small_config();
        cfg.ht_bump_width = 64;
        assert!(matches!(synth_dataset(&cfg), Err(Error::Config(_))));
        let mut cfg = small_config();
        cfg.base_amplitude_mw = 0.0;
        assert!(matches!(synth_dataset(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn synth_samples_nonnegative_and_sized() {
        let cfg = small_config();
        let ds = synth_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 2 * cfg.n_per_class);
        assert_eq!(ds.count(Label::Benign), cfg.n_per_class);
        assert_eq!(ds.count(Label::Ht), cfg.n_per_class);
        for it in ds.items() {
            assert_eq!(it.trace.len(), cfg.d);
            assert!(it.trace.samples().iter().all(|&s| s >= 0.0));
        }
    }

    #[test]
    fn zero_bump_uses_same_generator_for_both_classes() {
        let cfg = SynthConfig {
            ht_bump_mw: 0.0,
            noise_sigma_mw: 0.0,
            ..small_config()
        };
        let ds = synth_dataset(&cfg).unwrap();
        // Without noise or bump, every trace collapses to the same
        // deterministic waveform regardless of class.
        let reference = ds.items()[0].trace.samples().to_vec();
        for it in ds.items() {
            assert_eq!(it.trace.samples(), &reference[..]);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = synth_dataset(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        save_csv(&ds, &path).unwrap();
        let loaded = load_csv(&path, ds.sample_period_us()).unwrap();
        assert_eq!(loaded.len(), ds.len());
        for (a, b) in ds.items().iter().zip(loaded.items()) {
            assert_eq!(a.label, b.label);
            for (x, y) in a.trace.samples().iter().zip(b.trace.samples()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn csv_single_row_field_count() {
        let cfg = SynthConfig {
            n_per_class: 1,
            ..small_config()
        };
        let ds = synth_dataset(&cfg).unwrap();
        let one = TraceDataset::new(vec![ds.items()[0].clone()], "one").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.csv");
        save_csv(&one, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').count(), cfg.d + 1);
    }

    #[test]
    fn csv_parses_short_ht_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        std::fs::write(
            &path,
            "label,s0,s1,s2,s3,s4,s5,s6,s7\n1,0.0,0.0,0.0,0.0,0.0,0.0,0.0,0.0\n",
        )
        .unwrap();
        let ds = load_csv(&path, 1.0).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.d(), 8);
        assert_eq!(ds.items()[0].label, Label::Ht);
        assert!(ds.items()[0].trace.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn csv_rejects_inconsistent_row_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "label,s0,s1,s2,s3,s4,s5,s6,s7\n\
             0,1,1,1,1,1,1,1,1\n\
             1,1,1,1,1,1,1,1,1,1\n",
        )
        .unwrap();
        match load_csv(&path, 1.0) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_bad_label_and_bad_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad2.csv");
        std::fs::write(
            &path,
            "label,s0,s1,s2,s3,s4,s5,s6,s7\n2,1,1,1,1,1,1,1,1\n",
        )
        .unwrap();
        assert!(matches!(
            load_csv(&path, 1.0),
            Err(Error::Parse { row: 2, .. })
        ));
        std::fs::write(
            &path,
            "label,s0,s1,s2,s3,s4,s5,s6,s7\n0,1,x,1,1,1,1,1,1\n",
        )
        .unwrap();
        assert!(matches!(
            load_csv(&path, 1.0),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn save_to_invalid_path_is_io_error() {
        let ds = synth_dataset(&small_config()).unwrap();
        assert!(matches!(
            save_csv(&ds, Path::new("")),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let cfg = SynthConfig {
            n_per_class: 100,
            ..small_config()
        };
        let ds = synth_dataset(&cfg).unwrap();
        let (train, test) = split(&ds, 0.8, 11).unwrap();
        assert_eq!(train.count(Label::Benign), 80);
        assert_eq!(train.count(Label::Ht), 80);
        assert_eq!(test.count(Label::Benign), 20);
        assert_eq!(test.count(Label::Ht), 20);
        let (train2, test2) = split(&ds, 0.8, 11).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        // Union reproduces the original multiset; intersection is empty.
        assert_eq!(train.len() + test.len(), ds.len());
        let mut seen = vec![0usize; ds.len()];
        for it in train.items().iter().chain(test.items()) {
            let pos = ds
                .items()
                .iter()
                .enumerate()
                .position(|(i, orig)| seen[i] == 0 && orig == it)
                .expect("item present in original");
            seen[pos] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let ds = synth_dataset(&small_config()).unwrap();
        assert!(split(&ds, 0.0, 1).is_err());
        assert!(split(&ds, 1.0, 1).is_err());
    }

    #[test]
    fn noise_zero_sigma_is_identity() {
        let ds = synth_dataset(&small_config()).unwrap();
        let t = &ds.items()[0].trace;
        let out = add_measurement_noise(t, 0.0, 99).unwrap();
        assert_eq!(&out, t);
    }

    #[test]
    fn noise_clamps_at_zero() {
        let t = PowerTrace::new(vec![0.0; 64], 1.0).unwrap();
        let out = add_measurement_noise(&t, 0.1, 3).unwrap();
        assert!(out.samples().iter().all(|&s| s >= 0.0));
        // Roughly half the draws fall below zero and get clamped.
        assert!(out.samples().contains(&0.0));
        assert!(out.samples().iter().any(|&s| s > 0.0));
    }

    #[test]
    fn noise_rejects_negative_sigma() {
        let ds = synth_dataset(&small_config()).unwrap();
        assert!(add_measurement_noise(&ds.items()[0].trace, -0.1, 0).is_err());
    }

    #[test]
    fn noise_empirical_std_matches_sigma() {
        // Large constant trace keeps the clamp from ever binding, so the
        // added noise is directly observable as out - in.
        let d = 100_000;
        let t = PowerTrace::new(vec![1000.0; d], 1.0).unwrap();
        let out = add_measurement_noise(&t, 0.1, 1234).unwrap();
        let diffs: Vec<f64> = out
            .samples()
            .iter()
            .zip(t.samples())
            .map(|(o, i)| o - i)
            .collect();
        let mean = diffs.iter().sum::<f64>() / d as f64;
        let var = diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
        let std = var.sqrt();
        assert!(
            (std - 0.1).abs() / 0.1 < 0.02,
            "empirical std {std} deviates more than 2% from 0.1"
        );
    }
}
