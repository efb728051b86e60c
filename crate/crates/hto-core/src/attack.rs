//! Universal adversarial power patches.
//!
//! A patch is a nonnegative per-cycle power vector δ, bounded by a
//! budget ε, that a Trojan's auxiliary circuitry consumes on top of the
//! chip's own draw so the combined trace crosses the detector's decision
//! boundary toward the benign class. Variants: synchronized (patch and
//! trace aligned), unsynchronized (patch robust to cyclic misalignment),
//! spectrally constrained (patch confined to a frequency band to survive
//! band-pass prefiltering), and quantized (values restricted to a small
//! level set; see the quantizer module).

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detector::{json_err, Accuracy, DetectorParams};
use crate::error::{Error, Result};
use crate::quantizer::ValueSubspace;
use crate::spectral::{spectral_clip, BandPassFilter};
use crate::traces::{Label, TraceDataset};

/// Patch generation budget and hyperparameters.
///
/// `alpha` may be zero (a zero step leaves the initialization in
/// place); `sigma_mw` is the robustness noise added during optimization
/// only and never appears in the returned patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchBudget {
    /// Maximum patch magnitude ε, mW.
    pub epsilon_mw: f64,
    /// Gradient-sign step size α, mW.
    pub alpha: f64,
    /// Std of the Gaussian robustness noise added each batch, mW.
    pub sigma_mw: f64,
    /// Optimization iterations N.
    pub iterations: usize,
    /// Items per gradient batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl PatchBudget {
    /// Fixture-calibrated defaults for a given budget: α = 0.01·ε,
    /// σ = 0.02·ε, N = 400, batch 32. The exploration noise σ matters:
    /// without it the optimization stalls in flat regions well short of
    /// full evasion.
    pub fn for_epsilon(epsilon_mw: f64, seed: u64) -> Result<Self> {
        let budget = PatchBudget {
            epsilon_mw,
            alpha: 0.01 * epsilon_mw,
            sigma_mw: 0.02 * epsilon_mw,
            iterations: 400,
            batch_size: 32,
            seed,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_mw.is_finite() && self.epsilon_mw > 0.0) {
            return Err(Error::config("epsilon_mw must be > 0"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config("alpha must be >= 0"));
        }
        if !(self.sigma_mw.is_finite() && self.sigma_mw >= 0.0) {
            return Err(Error::config("sigma_mw must be >= 0"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }

    /// The same budget rescaled to a new ε, keeping α and σ
    /// proportional to it.
    pub fn scaled_to(&self, epsilon_mw: f64) -> Result<Self> {
        if !(epsilon_mw.is_finite() && epsilon_mw > 0.0) {
            return Err(Error::config("epsilon_mw must be > 0"));
        }
        let ratio = epsilon_mw / self.epsilon_mw;
        let scaled = PatchBudget {
            epsilon_mw,
            alpha: self.alpha * ratio,
            sigma_mw: self.sigma_mw * ratio,
            ..*self
        };
        scaled.validate()?;
        Ok(scaled)
    }
}

/// Patch generation variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchKind {
    Sync,
    Unsync,
    Adaptive,
    Quantized,
}

impl fmt::Display for PatchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PatchKind::Sync => "sync",
            PatchKind::Unsync => "unsync",
            PatchKind::Adaptive => "adaptive",
            PatchKind::Quantized => "quantized",
        };
        f.write_str(s)
    }
}

/// A generated universal patch with its provenance.
///
/// For every kind except `adaptive`, values satisfy `0 ≤ δ[i] ≤ ε`
/// exactly. The adaptive kind ends with a spectral projection, which can
/// push values slightly outside the budget; the residue is available
/// from [`AdversarialPatch::budget_overshoot_mw`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialPatch {
    delta: Vec<f64>,
    budget: PatchBudget,
    kind: PatchKind,
    band: Option<BandPassFilter>,
    subspace: Option<ValueSubspace>,
}

impl AdversarialPatch {
    pub(crate) fn new(
        delta: Vec<f64>,
        budget: PatchBudget,
        kind: PatchKind,
        band: Option<BandPassFilter>,
        subspace: Option<ValueSubspace>,
    ) -> Result<Self> {
        budget.validate()?;
        if delta.is_empty() {
            return Err(Error::shape("patch must have at least one value"));
        }
        if let Some(bad) = delta.iter().find(|v| !v.is_finite()) {
            return Err(Error::config(format!("non-finite patch value {bad}")));
        }
        if kind != PatchKind::Adaptive {
            if let Some(&bad) = delta
                .iter()
                .find(|v| **v < 0.0 || **v > budget.epsilon_mw)
            {
                return Err(Error::config(format!(
                    "patch value {bad} violates the clip contract [0, {}]",
                    budget.epsilon_mw
                )));
            }
        }
        if (kind == PatchKind::Adaptive) != band.is_some() {
            return Err(Error::config(
                "a frequency band is recorded exactly for adaptive patches",
            ));
        }
        if (kind == PatchKind::Quantized) != subspace.is_some() {
            return Err(Error::config(
                "a value subspace is recorded exactly for quantized patches",
            ));
        }
        if let Some(sub) = &subspace {
            if sub.max_level_mw() > budget.epsilon_mw {
                return Err(Error::config(format!(
                    "subspace level {} exceeds the budget {}",
                    sub.max_level_mw(),
                    budget.epsilon_mw
                )));
            }
            if let Some(&bad) = delta.iter().find(|v| !sub.contains(**v)) {
                return Err(Error::config(format!(
                    "quantized patch value {bad} is not a subspace level"
                )));
            }
        }
        Ok(AdversarialPatch {
            delta,
            budget,
            kind,
            band,
            subspace,
        })
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn budget(&self) -> &PatchBudget {
        &self.budget
    }

    pub fn kind(&self) -> PatchKind {
        self.kind
    }

    pub fn band(&self) -> Option<&BandPassFilter> {
        self.band.as_ref()
    }

    pub fn subspace(&self) -> Option<&ValueSubspace> {
        self.subspace.as_ref()
    }

    /// Worst distance of any value outside [0, ε]; zero for every kind
    /// except (possibly) adaptive, where the final spectral projection
    /// may leave a small residue.
    pub fn budget_overshoot_mw(&self) -> f64 {
        self.delta
            .iter()
            .map(|&v| (v - self.budget.epsilon_mw).max(-v).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Max-magnitude norm.
pub fn linf(delta: &[f64]) -> Result<f64> {
    if delta.is_empty() {
        return Err(Error::shape("L-infinity of an empty vector"));
    }
    Ok(delta.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Element-wise clamp to [0, epsilon_mw].
pub fn clip_budget(delta: &[f64], epsilon_mw: f64) -> Result<Vec<f64>> {
    if !(epsilon_mw.is_finite() && epsilon_mw > 0.0) {
        return Err(Error::config("epsilon_mw must be > 0"));
    }
    Ok(delta.iter().map(|v| v.clamp(0.0, epsilon_mw)).collect())
}

/// Cyclic right rotation by k: `out[j] = delta[(j - k) mod d]`, i.e.
/// the concatenation of the last k values with the first d-k. Models a
/// patch replayed in a continuous loop that starts k cycles early.
pub fn shift(delta: &[f64], k: usize) -> Result<Vec<f64>> {
    let d = delta.len();
    if d == 0 {
        return Err(Error::shape("shift of an empty vector"));
    }
    if k >= d {
        return Err(Error::config(format!(
            "shift {k} out of range for a {d}-cycle patch"
        )));
    }
    let mut out = Vec::with_capacity(d);
    out.extend_from_slice(&delta[d - k..]);
    out.extend_from_slice(&delta[..d - k]);
    Ok(out)
}

/// Inverse of [`shift`]: left rotation by k.
fn unshift(delta: &[f64], k: usize) -> Vec<f64> {
    let d = delta.len();
    let mut out = Vec::with_capacity(d);
    out.extend_from_slice(&delta[k..]);
    out.extend_from_slice(&delta[..k]);
    out
}

/// Strict mathematical sign: 0 maps to 0.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Shift behavior during gradient evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GenShift {
    /// Patch and trace aligned (Sync generation).
    Aligned,
    /// Fresh uniform shift drawn once per iteration (Unsync
    /// generation); per-item shifts would average the structural
    /// gradient to nearly zero.
    Uniform,
}

/// Per-batch projection applied after the magnitude clip.
enum Projection<'a> {
    None,
    Spectral {
        band: &'a BandPassFilter,
        sample_period_us: f64,
    },
    Subspace(&'a ValueSubspace),
}

impl Projection<'_> {
    fn apply(&self, v: Vec<f64>) -> Result<Vec<f64>> {
        match self {
            Projection::None => Ok(v),
            Projection::Spectral {
                band,
                sample_period_us,
            } => spectral_clip(&v, *sample_period_us, band),
            Projection::Subspace(sub) => Ok(sub.project(&v)),
        }
    }
}

/// Shared optimization loop behind all patch generators.
///
/// Per batch of HT traces: accumulate the mean signed-gradient descent
/// step toward the benign label onto δ, clamp to [0, ε], then apply the
/// kind-specific projection with fresh Gaussian robustness noise. The
/// returned δ is the final clamp+projection WITHOUT the noise term, so
/// the optimization sees noise but the artifact does not.
fn generate_core(
    dataset: &TraceDataset,
    params: &DetectorParams,
    budget: &PatchBudget,
    gen_shift: GenShift,
    projection: Projection<'_>,
) -> Result<Vec<f64>> {
    budget.validate()?;
    let d = dataset.d();
    if params.d() != d {
        return Err(Error::shape(format!(
            "detector expects traces of length {}, dataset has {d}",
            params.d()
        )));
    }
    let ht: Vec<&[f64]> = dataset
        .traces_of(Label::Ht)
        .into_iter()
        .map(|t| t.samples())
        .collect();
    if ht.is_empty() {
        return Err(Error::config(
            "patch generation needs HT-class traces to optimize against",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let noise = if budget.sigma_mw > 0.0 {
        Some(Normal::new(0.0, budget.sigma_mw).map_err(|e| {
            Error::config(format!("invalid sigma {}: {e}", budget.sigma_mw))
        })?)
    } else {
        None
    };

    let mut delta: Vec<f64> = (0..d)
        .map(|_| rng.gen_range(0.0..budget.epsilon_mw))
        .collect();
    let mut clean = delta.clone();
    let mut order: Vec<usize> = (0..ht.len()).collect();
    let mut x_buf = vec![0.0; d];

    for _ in 0..budget.iterations {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let k = match gen_shift {
            GenShift::Aligned => 0,
            GenShift::Uniform => rng.gen_range(0..d),
        };
        for batch in order.chunks(budget.batch_size) {
            let shifted;
            let patch_view: &[f64] = if k == 0 {
                &delta
            } else {
                shifted = shift(&delta, k)?;
                &shifted
            };
            let mut step = vec![0.0; d];
            for &idx in batch {
                let x = ht[idx];
                for ((b, xv), pv) in x_buf.iter_mut().zip(x).zip(patch_view) {
                    *b = xv + pv;
                }
                let grad = params.input_gradient(&x_buf, Label::Benign)?;
                // Descend the benign-label loss; a shift of the patch
                // rotates the gradient back by the same k (chain rule
                // through the rotation).
                let grad = if k == 0 { grad } else { unshift(&grad, k) };
                for (s, g) in step.iter_mut().zip(&grad) {
                    *s -= sign(*g);
                }
            }
            let scale = budget.alpha / batch.len() as f64;
            for (dv, s) in delta.iter_mut().zip(&step) {
                *dv += scale * s;
            }
            for dv in delta.iter_mut() {
                *dv = dv.clamp(0.0, budget.epsilon_mw);
            }
            clean = projection.apply(delta.clone())?;
            delta = match &noise {
                None => clean.clone(),
                Some(normal) => {
                    let noised: Vec<f64> = delta
                        .iter()
                        .map(|&v| v + normal.sample(&mut rng))
                        .collect();
                    projection.apply(noised)?
                }
            };
        }
    }
    Ok(clean)
}

/// Synchronized universal patch (replayed aligned with the trace).
pub fn generate_patch(
    dataset: &TraceDataset,
    params: &DetectorParams,
    budget: &PatchBudget,
) -> Result<AdversarialPatch> {
    let delta = generate_core(dataset, params, budget, GenShift::Aligned, Projection::None)?;
    AdversarialPatch::new(delta, *budget, PatchKind::Sync, None, None)
}

/// Shift-robust universal patch: each iteration sees the patch under a
/// fresh uniform cyclic shift, so the result evades the detector
/// regardless of replay alignment.
pub fn generate_unsync_patch(
    dataset: &TraceDataset,
    params: &DetectorParams,
    budget: &PatchBudget,
) -> Result<AdversarialPatch> {
    let delta = generate_core(dataset, params, budget, GenShift::Uniform, Projection::None)?;
    AdversarialPatch::new(delta, *budget, PatchKind::Unsync, None, None)
}

/// Spectrally constrained patch: each optimization step projects onto
/// the band, and the returned patch is projected last, so its
/// out-of-band energy is negligible while the magnitude budget may be
/// overshot by a small reported residue.
pub fn generate_adaptive_patch(
    dataset: &TraceDataset,
    params: &DetectorParams,
    budget: &PatchBudget,
    band: &BandPassFilter,
    shift_robust: bool,
) -> Result<AdversarialPatch> {
    let gen_shift = if shift_robust {
        GenShift::Uniform
    } else {
        GenShift::Aligned
    };
    let delta = generate_core(
        dataset,
        params,
        budget,
        gen_shift,
        Projection::Spectral {
            band,
            sample_period_us: dataset.sample_period_us(),
        },
    )?;
    AdversarialPatch::new(delta, *budget, PatchKind::Adaptive, Some(*band), None)
}

/// Quantized patch: values restricted to the subspace after every step
/// (used by the quantizer module, which owns subspace construction).
pub(crate) fn generate_projected_patch(
    dataset: &TraceDataset,
    params: &DetectorParams,
    budget: &PatchBudget,
    subspace: &ValueSubspace,
    shift_robust: bool,
) -> Result<AdversarialPatch> {
    let gen_shift = if shift_robust {
        GenShift::Uniform
    } else {
        GenShift::Aligned
    };
    let delta = generate_core(
        dataset,
        params,
        budget,
        gen_shift,
        Projection::Subspace(subspace),
    )?;
    AdversarialPatch::new(
        delta,
        *budget,
        PatchKind::Quantized,
        None,
        Some(subspace.clone()),
    )
}

/// How the patch is aligned to each trace during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMode {
    /// Patch applied as-is (k = 0).
    None,
    /// Fixed shift k for every trace.
    Fixed(usize),
    /// Fresh uniform k per trace, drawn from the policy seed.
    UniformRandom,
}

/// Evaluation-time shift policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftPolicy {
    pub mode: ShiftMode,
    pub seed: u64,
}

impl ShiftPolicy {
    pub fn none() -> Self {
        ShiftPolicy {
            mode: ShiftMode::None,
            seed: 0,
        }
    }

    pub fn fixed(k: usize) -> Self {
        ShiftPolicy {
            mode: ShiftMode::Fixed(k),
            seed: 0,
        }
    }

    pub fn uniform(seed: u64) -> Self {
        ShiftPolicy {
            mode: ShiftMode::UniformRandom,
            seed,
        }
    }
}

/// Per-class detector accuracy on `dataset` with `patch` added to every
/// trace under the shift policy, optionally through a band-pass
/// preprocessor (the filtered-detector defense).
pub fn evaluate_patch(
    params: &DetectorParams,
    dataset: &TraceDataset,
    patch: &AdversarialPatch,
    policy: &ShiftPolicy,
    preproc: Option<&BandPassFilter>,
) -> Result<Accuracy> {
    evaluate_delta(params, dataset, patch.delta(), policy, preproc)
}

/// [`evaluate_patch`] for a raw δ vector.
pub fn evaluate_delta(
    params: &DetectorParams,
    dataset: &TraceDataset,
    delta: &[f64],
    policy: &ShiftPolicy,
    preproc: Option<&BandPassFilter>,
) -> Result<Accuracy> {
    let d = dataset.d();
    if delta.len() != d {
        return Err(Error::shape(format!(
            "patch has {} values, traces have {d}",
            delta.len()
        )));
    }
    if let ShiftMode::Fixed(k) = policy.mode {
        if k >= d {
            return Err(Error::config(format!(
                "fixed shift {k} out of range for {d}-cycle patch"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut correct = [0usize; 2];
    let mut total = [0usize; 2];
    let mut x_buf = vec![0.0; d];
    for item in dataset.items() {
        let shifted;
        let patch_view: &[f64] = match policy.mode {
            ShiftMode::None => delta,
            ShiftMode::Fixed(k) => {
                shifted = shift(delta, k)?;
                &shifted
            }
            ShiftMode::UniformRandom => {
                let k = rng.gen_range(0..d);
                shifted = shift(delta, k)?;
                &shifted
            }
        };
        for ((b, xv), pv) in x_buf
            .iter_mut()
            .zip(item.trace.samples())
            .zip(patch_view)
        {
            *b = xv + pv;
        }
        let prediction = match preproc {
            None => params.predict(&x_buf)?,
            Some(filter) => {
                let filtered =
                    crate::spectral::band_pass(&x_buf, dataset.sample_period_us(), filter)?;
                params.predict(&filtered)?
            }
        };
        let c = item.label.class_id() as usize;
        total[c] += 1;
        if prediction == item.label {
            correct[c] += 1;
        }
    }
    let pct =
        |c: usize| -> Option<f64> { (total[c] > 0).then(|| 100.0 * correct[c] as f64 / total[c] as f64) };
    Ok(Accuracy {
        overall_percent: 100.0 * (correct[0] + correct[1]) as f64 / dataset.len() as f64,
        benign_percent: pct(0),
        ht_percent: pct(1),
    })
}

/// Sweep variant selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    Sync,
    Unsync,
}

/// One row of a budget sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub epsilon_mw: f64,
    pub class0_percent: f64,
    pub class1_percent: f64,
}

/// Generate and evaluate one patch per budget in `epsilons`
/// (strictly ascending). α and σ scale proportionally from
/// `base_budget`. Sync patches are evaluated aligned; unsync patches
/// under uniform random shifts.
pub fn budget_sweep(
    dataset: &TraceDataset,
    params: &DetectorParams,
    base_budget: &PatchBudget,
    epsilons: &[f64],
    mode: SweepMode,
) -> Result<Vec<SweepPoint>> {
    if epsilons.is_empty() {
        return Err(Error::config("budget sweep needs at least one epsilon"));
    }
    if epsilons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("sweep epsilons must be strictly ascending"));
    }
    let mut curve = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let budget = base_budget.scaled_to(eps)?;
        let (patch, policy) = match mode {
            SweepMode::Sync => (
                generate_patch(dataset, params, &budget)?,
                ShiftPolicy::none(),
            ),
            SweepMode::Unsync => (
                generate_unsync_patch(dataset, params, &budget)?,
                ShiftPolicy::uniform(crate::seeds::derive_seed(budget.seed, "sweep-eval")),
            ),
        };
        let acc = evaluate_patch(params, dataset, &patch, &policy, None)?;
        curve.push(SweepPoint {
            epsilon_mw: eps,
            class0_percent: acc.benign_percent.unwrap_or(100.0),
            class1_percent: acc.ht_percent.unwrap_or(0.0),
        });
    }
    Ok(curve)
}

/// Smallest swept ε whose class-1 accuracy is at or below
/// `threshold_percent`, if any.
pub fn epsilon_star(curve: &[SweepPoint], threshold_percent: f64) -> Option<f64> {
    curve
        .iter()
        .find(|p| p.class1_percent <= threshold_percent)
        .map(|p| p.epsilon_mw)
}

#[derive(Serialize, Deserialize)]
struct PatchFile {
    kind: PatchKind,
    epsilon_mw: f64,
    sigma_mw: f64,
    alpha: f64,
    iterations: usize,
    batch_size: usize,
    seed: u64,
    band_mhz: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    levels_mw: Option<Vec<f64>>,
    values_mw: Vec<f64>,
}

/// Write a patch as JSON (band edges in MHz, as reported by the CLI).
pub fn save_patch(patch: &AdversarialPatch, path: impl AsRef<Path>) -> Result<()> {
    let file = PatchFile {
        kind: patch.kind,
        epsilon_mw: patch.budget.epsilon_mw,
        sigma_mw: patch.budget.sigma_mw,
        alpha: patch.budget.alpha,
        iterations: patch.budget.iterations,
        batch_size: patch.budget.batch_size,
        seed: patch.budget.seed,
        band_mhz: patch.band.map(|b| [b.f_min_hz / 1e6, b.f_max_hz / 1e6]),
        levels_mw: patch.subspace.as_ref().map(|s| s.levels_mw().to_vec()),
        values_mw: patch.delta.clone(),
    };
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer(&mut w, &file).map_err(json_err)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Load a patch written by [`save_patch`], re-validating the clip
/// contract and kind-specific metadata.
pub fn load_patch(path: impl AsRef<Path>) -> Result<AdversarialPatch> {
    let r = BufReader::new(File::open(path.as_ref())?);
    let file: PatchFile = serde_json::from_reader(r).map_err(json_err)?;
    let budget = PatchBudget {
        epsilon_mw: file.epsilon_mw,
        alpha: file.alpha,
        sigma_mw: file.sigma_mw,
        iterations: file.iterations,
        batch_size: file.batch_size,
        seed: file.seed,
    };
    let band = match file.band_mhz {
        None => None,
        Some([lo, hi]) => Some(BandPassFilter::new(lo * 1e6, hi * 1e6)?),
    };
    let subspace = file.levels_mw.map(ValueSubspace::new).transpose()?;
    AdversarialPatch::new(file.values_mw, budget, file.kind, band, subspace)
}
