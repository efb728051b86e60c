//! Defender-side countermeasures.
//!
//! Two defenses against adversarial power patches: band-pass filtering
//! of traces before they reach the detector (removes patch energy the
//! chip's own activity does not occupy), and adversarial training,
//! where each mini-batch is replaced by its worst-case nonnegative
//! perturbation before the gradient step.

use crate::attack::{evaluate_patch, generate_patch, PatchBudget, ShiftPolicy};
use crate::detector::{
    accuracy, train_impl, ArchitectureSpec, DetectorParams, EpochStats, TrainConfig,
};
use crate::error::{Error, Result};
use crate::spectral::{band_pass, BandPassFilter};
use crate::traces::{Label, TraceDataset};

/// A detector that sees band-pass-filtered traces at inference time.
/// The underlying params are plain-trained; only the input changes.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredDetector {
    params: DetectorParams,
    filter: BandPassFilter,
    sample_period_us: f64,
}

impl FilteredDetector {
    pub fn new(
        params: DetectorParams,
        filter: BandPassFilter,
        sample_period_us: f64,
    ) -> Result<Self> {
        filter.validate_for(sample_period_us)?;
        Ok(FilteredDetector {
            params,
            filter,
            sample_period_us,
        })
    }

    pub fn params(&self) -> &DetectorParams {
        &self.params
    }

    pub fn filter(&self) -> &BandPassFilter {
        &self.filter
    }

    pub fn sample_period_us(&self) -> f64 {
        self.sample_period_us
    }
}

/// Adversarial-training configuration. Epochs, learning rate, and seed
/// stay in [`TrainConfig`]; this only describes the inner maximization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ATConfig {
    /// Train-time perturbation bound, mW. Zero disables perturbation.
    pub epsilon_mw: f64,
    /// PGD step size, mW.
    pub step_mw: f64,
    pub pgd_iters: usize,
}

impl ATConfig {
    /// Standard settings: step 0.1 mW, 20 iterations.
    pub fn for_epsilon(epsilon_mw: f64) -> Result<Self> {
        let at = ATConfig {
            epsilon_mw,
            step_mw: 0.1,
            pgd_iters: 20,
        };
        at.validate()?;
        Ok(at)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_mw.is_finite() && self.epsilon_mw >= 0.0) {
            return Err(Error::config("AT epsilon_mw must be >= 0"));
        }
        if !(self.step_mw.is_finite() && self.step_mw > 0.0) {
            return Err(Error::config("PGD step must be > 0"));
        }
        if self.pgd_iters == 0 {
            return Err(Error::config("PGD needs at least one iteration"));
        }
        Ok(())
    }
}

/// Predict on the filtered trace.
pub fn filtered_predict(fd: &FilteredDetector, trace: &[f64]) -> Result<Label> {
    let filtered = band_pass(trace, fd.sample_period_us, &fd.filter)?;
    fd.params.predict(&filtered)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projected gradient ascent on the loss at `label`, constrained to a
/// nonnegative perturbation of at most ε per element (the physical
/// patch threat: added power only). No random start; ε = 0 returns the
/// input unchanged.
pub fn pgd_attack(
    params: &DetectorParams,
    trace: &[f64],
    label: Label,
    at: &ATConfig,
) -> Result<Vec<f64>> {
    at.validate()?;
    if at.epsilon_mw == 0.0 {
        return Ok(trace.to_vec());
    }
    let mut x = trace.to_vec();
    for _ in 0..at.pgd_iters {
        let grad = params.input_gradient(&x, label)?;
        for ((xv, g), x0) in x.iter_mut().zip(&grad).zip(trace) {
            *xv = (*xv + at.step_mw * sign(*g))
                .clamp(*x0, x0 + at.epsilon_mw)
                .max(0.0);
        }
    }
    Ok(x)
}

/// Train with each sample replaced by its PGD perturbation against the
/// current parameters (the inner maximization of robust training).
/// With ε = 0 this is exactly plain training.
pub fn adversarial_train(
    dataset: &TraceDataset,
    arch: &ArchitectureSpec,
    config: &TrainConfig,
    at: &ATConfig,
) -> Result<(DetectorParams, Vec<EpochStats>)> {
    at.validate()?;
    train_impl(dataset, arch, config, |params, item| {
        pgd_attack(params, item.trace.samples(), item.label, at)
    })
}

/// One row of a robustness comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessPoint {
    pub epsilon_mw: f64,
    /// Plain model's class-1 accuracy under a patch tuned against it.
    pub plain_acc_percent: f64,
    /// AT model's class-1 accuracy under a fresh patch tuned against it.
    pub at_acc_percent: f64,
    /// AT model's clean overall accuracy (utility reference).
    pub at_clean_percent: f64,
}

/// For each attack budget, generate a fresh synchronized patch against
/// each model and record the post-patch class-1 accuracies, plus the AT
/// model's clean utility.
pub fn robustness_curve(
    plain_params: &DetectorParams,
    at_params: &DetectorParams,
    dataset: &TraceDataset,
    base_budget: &PatchBudget,
    epsilons: &[f64],
) -> Result<Vec<RobustnessPoint>> {
    if epsilons.is_empty() {
        return Err(Error::config("robustness curve needs at least one epsilon"));
    }
    if epsilons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("curve epsilons must be strictly ascending"));
    }
    let at_clean = accuracy(at_params, dataset)?.overall_percent;
    let policy = ShiftPolicy::none();
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let budget = base_budget.scaled_to(eps)?;
        let against_plain = generate_patch(dataset, plain_params, &budget)?;
        let against_at = generate_patch(dataset, at_params, &budget)?;
        let plain_acc = evaluate_patch(plain_params, dataset, &against_plain, &policy, None)?;
        let at_acc = evaluate_patch(at_params, dataset, &against_at, &policy, None)?;
        rows.push(RobustnessPoint {
            epsilon_mw: eps,
            plain_acc_percent: plain_acc.ht_percent.unwrap_or(0.0),
            at_acc_percent: at_acc.ht_percent.unwrap_or(0.0),
            at_clean_percent: at_clean,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{train, ConvSpec};
    use crate::spectral::nyquist_hz;
    use crate::traces::{synth_dataset, SynthConfig};

    fn small_dataset() -> TraceDataset {
        synth_dataset(&SynthConfig {
            d: 64,
            n_per_class: 50,
            n_rounds: 4,
            ht_bump_mw: 2.0,
            ht_bump_width: 16,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn small_arch() -> ArchitectureSpec {
        ArchitectureSpec {
            convs: vec![
                ConvSpec {
                    out_channels: 4,
                    kernel: 5,
                    stride: 2,
                },
                ConvSpec {
                    out_channels: 8,
                    kernel: 5,
                    stride: 2,
                },
            ],
            hidden: 16,
        }
    }

    fn small_train_config() -> TrainConfig {
        TrainConfig {
            epochs: 8,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 3,
        }
    }

    #[test]
    fn full_band_filter_predicts_like_plain() {
        let ds = small_dataset();
        let params = DetectorParams::init(small_arch(), ds.d(), 5).unwrap();
        let nyq = nyquist_hz(ds.sample_period_us()).unwrap();
        let fd = FilteredDetector::new(
            params.clone(),
            BandPassFilter::new(0.0, nyq).unwrap(),
            ds.sample_period_us(),
        )
        .unwrap();
        for item in ds.items() {
            let plain = params.predict(item.trace.samples()).unwrap();
            let filtered = filtered_predict(&fd, item.trace.samples()).unwrap();
            assert_eq!(plain, filtered);
        }
    }

    #[test]
    fn filtered_detector_rejects_band_beyond_nyquist() {
        let ds = small_dataset();
        let params = DetectorParams::init(small_arch(), ds.d(), 5).unwrap();
        let nyq = nyquist_hz(ds.sample_period_us()).unwrap();
        assert!(FilteredDetector::new(
            params,
            BandPassFilter::new(0.0, nyq * 2.0).unwrap(),
            ds.sample_period_us()
        )
        .is_err());
    }

    #[test]
    fn at_config_validates() {
        let at = ATConfig::for_epsilon(1.5).unwrap();
        assert_eq!(at.step_mw, 0.1);
        assert_eq!(at.pgd_iters, 20);
        assert!(ATConfig::for_epsilon(-1.0).is_err());
        assert!(ATConfig {
            epsilon_mw: 1.0,
            step_mw: 0.0,
            pgd_iters: 20
        }
        .validate()
        .is_err());
        assert!(ATConfig {
            epsilon_mw: 1.0,
            step_mw: 0.1,
            pgd_iters: 0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn pgd_zero_epsilon_is_identity() {
        let ds = small_dataset();
        let params = DetectorParams::init(small_arch(), ds.d(), 5).unwrap();
        let at = ATConfig {
            epsilon_mw: 0.0,
            step_mw: 0.1,
            pgd_iters: 20,
        };
        let x = ds.items()[0].trace.samples();
        let out = pgd_attack(&params, x, Label::Ht, &at).unwrap();
        assert!(out.iter().zip(x).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn pgd_respects_perturbation_set_and_raises_loss() {
        let ds = small_dataset();
        let params = DetectorParams::init(small_arch(), ds.d(), 5).unwrap();
        let at = ATConfig::for_epsilon(0.8).unwrap();
        for item in ds.items().iter().take(10) {
            let x = item.trace.samples();
            let out = pgd_attack(&params, x, item.label, &at).unwrap();
            for (o, i) in out.iter().zip(x) {
                assert!(*o >= *i - 1e-15, "perturbation went negative");
                assert!(*o <= i + at.epsilon_mw + 1e-12, "perturbation exceeded eps");
                assert!(*o >= 0.0);
            }
            let before = params.loss(x, item.label).unwrap();
            let after = params.loss(&out, item.label).unwrap();
            assert!(after >= before - 1e-9, "ascent lowered loss: {before} -> {after}");
        }
    }

    #[test]
    fn single_tiny_step_does_not_lower_loss() {
        let ds = small_dataset();
        let params = DetectorParams::init(small_arch(), ds.d(), 5).unwrap();
        let at = ATConfig {
            epsilon_mw: 0.5,
            step_mw: 1e-6,
            pgd_iters: 1,
        };
        let item = &ds.items()[3];
        let out = pgd_attack(&params, item.trace.samples(), item.label, &at).unwrap();
        let before = params.loss(item.trace.samples(), item.label).unwrap();
        let after = params.loss(&out, item.label).unwrap();
        assert!(after >= before - 1e-12);
    }

    #[test]
    fn pgd_beats_single_step_at_equal_budget_on_most_traces() {
        let ds = small_dataset();
        let (params, _) = train(&ds, &small_arch(), &small_train_config()).unwrap();
        let eps = 0.8;
        let pgd = ATConfig {
            epsilon_mw: eps,
            step_mw: 0.1,
            pgd_iters: 20,
        };
        let single = ATConfig {
            epsilon_mw: eps,
            step_mw: eps,
            pgd_iters: 1,
        };
        let mut wins = 0;
        let mut total = 0;
        for item in ds.items() {
            let x = item.trace.samples();
            let multi = pgd_attack(&params, x, item.label, &pgd).unwrap();
            let one = pgd_attack(&params, x, item.label, &single).unwrap();
            let l_multi = params.loss(&multi, item.label).unwrap();
            let l_one = params.loss(&one, item.label).unwrap();
            if l_multi >= l_one - 1e-12 {
                wins += 1;
            }
            total += 1;
        }
        assert!(
            wins * 100 >= total * 80,
            "PGD matched or beat the single step on only {wins}/{total} traces"
        );
    }

    #[test]
    fn zero_epsilon_training_is_plain_training() {
        let ds = small_dataset();
        let config = small_train_config();
        let (plain, plain_stats) = train(&ds, &small_arch(), &config).unwrap();
        let at = ATConfig {
            epsilon_mw: 0.0,
            step_mw: 0.1,
            pgd_iters: 20,
        };
        let (robust, robust_stats) = adversarial_train(&ds, &small_arch(), &config, &at).unwrap();
        let (a, b) = (plain.to_flat(), robust.to_flat());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(plain_stats, robust_stats);
    }

    #[test]
    fn adversarial_training_is_deterministic_and_differs_from_plain() {
        let ds = small_dataset();
        let config = TrainConfig {
            epochs: 2,
            ..small_train_config()
        };
        let at = ATConfig {
            epsilon_mw: 0.5,
            step_mw: 0.1,
            pgd_iters: 5,
        };
        let (a, _) = adversarial_train(&ds, &small_arch(), &config, &at).unwrap();
        let (b, _) = adversarial_train(&ds, &small_arch(), &config, &at).unwrap();
        assert!(a
            .to_flat()
            .iter()
            .zip(b.to_flat())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        let (plain, _) = train(&ds, &small_arch(), &config).unwrap();
        assert_ne!(plain.to_flat(), a.to_flat());
    }

    #[test]
    fn robustness_curve_shape_and_validation() {
        let ds = small_dataset();
        let config = TrainConfig {
            epochs: 2,
            ..small_train_config()
        };
        let (plain, _) = train(&ds, &small_arch(), &config).unwrap();
        let at = ATConfig {
            epsilon_mw: 0.5,
            step_mw: 0.1,
            pgd_iters: 3,
        };
        let (robust, _) = adversarial_train(&ds, &small_arch(), &config, &at).unwrap();
        let base = PatchBudget {
            epsilon_mw: 1.0,
            alpha: 0.01,
            sigma_mw: 0.0,
            iterations: 3,
            batch_size: 16,
            seed: 2,
        };
        let eps = [0.5, 1.0];
        let rows = robustness_curve(&plain, &robust, &ds, &base, &eps).unwrap();
        assert_eq!(rows.len(), 2);
        let clean = accuracy(&robust, &ds).unwrap().overall_percent;
        for (row, e) in rows.iter().zip(eps) {
            assert_eq!(row.epsilon_mw, e);
            assert_eq!(row.at_clean_percent, clean);
            assert!((0.0..=100.0).contains(&row.plain_acc_percent));
            assert!((0.0..=100.0).contains(&row.at_acc_percent));
        }
        let again = robustness_curve(&plain, &robust, &ds, &base, &eps).unwrap();
        assert_eq!(rows, again);
        assert!(robustness_curve(&plain, &robust, &ds, &base, &[]).is_err());
        assert!(robustness_curve(&plain, &robust, &ds, &base, &[1.0, 0.5]).is_err());
    }
}
