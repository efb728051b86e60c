//! A small 1-D convolutional net that classifies power traces as benign
//! or Trojan-inserted.
//!
//! Everything is f64 and hand-rolled: valid (no-padding) strided
//! convolutions with ReLU, one hidden fully connected layer, two output
//! logits. Training is plain SGD with momentum. The analytic input
//! gradient doubles as the attack surface for patch generation, so both
//! forward and backward passes are exact rather than approximate.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traces::{Label, LabeledTrace, TraceDataset};

/// Numerical floor applied to probabilities inside the loss.
const PROB_FLOOR: f64 = 1e-12;

/// One convolutional layer: `out_channels` filters of width `kernel`
/// applied with step `stride`, no padding, ReLU activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Network shape: a stack of convolutions, one hidden dense layer of
/// `hidden` units, then two logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        ArchitectureSpec {
            convs: vec![
                ConvSpec {
                    out_channels: 4,
                    kernel: 9,
                    stride: 2,
                },
                ConvSpec {
                    out_channels: 8,
                    kernel: 9,
                    stride: 2,
                },
            ],
            hidden: 64,
        }
    }
}

impl ArchitectureSpec {
    /// Output length of each conv layer for input length `d`.
    ///
    /// Valid convolution: `out = (in - kernel) / stride + 1`. Errors if
    /// any layer shrinks its input below one sample.
    pub fn conv_out_lens(&self, d: usize) -> Result<Vec<usize>> {
        if self.convs.is_empty() {
            return Err(Error::config("architecture needs at least one conv layer"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden width must be at least 1"));
        }
        let mut len = d;
        let mut lens = Vec::with_capacity(self.convs.len());
        for (l, c) in self.convs.iter().enumerate() {
            if c.out_channels == 0 || c.kernel == 0 || c.stride == 0 {
                return Err(Error::config(format!(
                    "conv layer {l} has a zero dimension"
                )));
            }
            if len < c.kernel {
                return Err(Error::shape(format!(
                    "conv layer {l} kernel {} exceeds its input length {len}",
                    c.kernel
                )));
            }
            len = (len - c.kernel) / c.stride + 1;
            lens.push(len);
        }
        Ok(lens)
    }

    /// Channel count feeding conv layer `l`.
    fn in_channels(&self, l: usize) -> usize {
        if l == 0 {
            1
        } else {
            self.convs[l - 1].out_channels
        }
    }

    /// Flattened feature count entering the dense head.
    pub fn flat_len(&self, d: usize) -> Result<usize> {
        let lens = self.conv_out_lens(d)?;
        Ok(self.convs.last().expect("validated nonempty").out_channels * lens[lens.len() - 1])
    }

    /// Total trainable parameter count for input length `d`.
    pub fn param_count(&self, d: usize) -> Result<usize> {
        let flat = self.flat_len(d)?;
        let mut n = 0;
        for (l, c) in self.convs.iter().enumerate() {
            n += c.out_channels * self.in_channels(l) * c.kernel + c.out_channels;
        }
        n += self.hidden * flat + self.hidden;
        n += 2 * self.hidden + 2;
        Ok(n)
    }
}

/// Training hyperparameters. `seed` drives both weight initialization
/// and epoch shuffling. A zero learning rate is legal and leaves the
/// initial weights untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("learning_rate must be >= 0"));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Loss and accuracy of one training epoch, measured on the samples the
/// epoch actually trained on (after any perturbation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy_percent: f64,
}

/// Per-class and overall accuracy in percent. A class absent from the
/// dataset reports `None` rather than a fabricated number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub overall_percent: f64,
    pub benign_percent: Option<f64>,
    pub ht_percent: Option<f64>,
}

/// Trained (or freshly initialized) detector weights for traces of a
/// fixed length.
///
/// Preprocessing before the first convolution is affine: each trace is
/// centered by its own mean (so a constant power offset is invisible),
/// then a per-position mean is subtracted and the result is divided by
/// one residual scale. The per-position mean and the scale are frozen
/// from the training set (see [`standardization_of`]); they remove the
/// deterministic activity profile shared by both classes so the
/// network sees the informative residual at unit scale. An untrained
/// net carries the identity (zero mean, unit scale). Gradients
/// reported to callers are with respect to the raw mW samples, the
/// preprocessing included in the chain rule.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    arch: ArchitectureSpec,
    d: usize,
    conv_out_lens: Vec<usize>,
    input_mean: Vec<f64>,
    input_scale: f64,
    pub(crate) conv_w: Vec<Vec<f64>>,
    pub(crate) conv_b: Vec<Vec<f64>>,
    pub(crate) fc1_w: Vec<f64>,
    pub(crate) fc1_b: Vec<f64>,
    pub(crate) fc2_w: Vec<f64>,
    pub(crate) fc2_b: Vec<f64>,
}

/// Forward-pass intermediates kept for backpropagation.
struct Cache {
    /// `acts[0]` is the preprocessed input; `acts[l+1]` is the
    /// post-ReLU output of conv layer `l`, channel-major. The last
    /// entry is the flattened feature vector.
    acts: Vec<Vec<f64>>,
    /// Pre-activation of each conv layer, channel-major.
    pres: Vec<Vec<f64>>,
    fc1_pre: Vec<f64>,
    fc1_post: Vec<f64>,
    logits: [f64; 2],
    probs: [f64; 2],
}

/// Parameter-shaped buffer used for gradients and momentum.
#[derive(Debug, Clone)]
pub(crate) struct Grad {
    conv_w: Vec<Vec<f64>>,
    conv_b: Vec<Vec<f64>>,
    fc1_w: Vec<f64>,
    fc1_b: Vec<f64>,
    fc2_w: Vec<f64>,
    fc2_b: Vec<f64>,
}

impl Grad {
    fn zeros_of(p: &DetectorParams) -> Grad {
        Grad {
            conv_w: p.conv_w.iter().map(|w| vec![0.0; w.len()]).collect(),
            conv_b: p.conv_b.iter().map(|b| vec![0.0; b.len()]).collect(),
            fc1_w: vec![0.0; p.fc1_w.len()],
            fc1_b: vec![0.0; p.fc1_b.len()],
            fc2_w: vec![0.0; p.fc2_w.len()],
            fc2_b: vec![0.0; p.fc2_b.len()],
        }
    }

    fn fill_zero(&mut self) {
        for w in self.conv_w.iter_mut().chain(self.conv_b.iter_mut()) {
            w.fill(0.0);
        }
        self.fc1_w.fill(0.0);
        self.fc1_b.fill(0.0);
        self.fc2_w.fill(0.0);
        self.fc2_b.fill(0.0);
    }
}

impl DetectorParams {
    /// Freshly initialized weights: each tensor uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero. Deterministic
    /// in `seed`; draw order matches the flat parameter order.
    pub fn init(arch: ArchitectureSpec, d: usize, seed: u64) -> Result<Self> {
        let conv_out_lens = arch.conv_out_lens(d)?;
        let flat = arch.flat_len(d)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        for (l, c) in arch.convs.iter().enumerate() {
            let in_c = arch.in_channels(l);
            conv_w.push(draw(c.out_channels * in_c * c.kernel, in_c * c.kernel));
            conv_b.push(vec![0.0; c.out_channels]);
        }
        let fc1_w = draw(arch.hidden * flat, flat);
        let fc1_b = vec![0.0; arch.hidden];
        let fc2_w = draw(2 * arch.hidden, arch.hidden);
        let fc2_b = vec![0.0; 2];
        Ok(DetectorParams {
            input_mean: vec![0.0; d],
            input_scale: 1.0,
            arch,
            d,
            conv_out_lens,
            conv_w,
            conv_b,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        })
    }

    /// Replace the frozen preprocessing constants (per-position mean in
    /// mW and the residual scale).
    pub fn with_standardization(mut self, mean: Vec<f64>, scale: f64) -> Result<Self> {
        if mean.len() != self.d {
            return Err(Error::shape(format!(
                "standardization mean has {} entries, expected {}",
                mean.len(),
                self.d
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("standardization mean must be finite"));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::config(format!(
                "standardization scale must be > 0, got {scale}"
            )));
        }
        self.input_mean = mean;
        self.input_scale = scale;
        Ok(self)
    }

    pub fn input_mean(&self) -> &[f64] {
        &self.input_mean
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    /// Rebuild weights from the flat order used by [`Self::to_flat`]
    /// and the on-disk model format.
    pub fn from_flat(arch: ArchitectureSpec, d: usize, flat: &[f64]) -> Result<Self> {
        let expected = arch.param_count(d)?;
        if flat.len() != expected {
            return Err(Error::shape(format!(
                "flat parameter vector has {} entries, architecture needs {expected}",
                flat.len()
            )));
        }
        if let Some(bad) = flat.iter().find(|v| !v.is_finite()) {
            return Err(Error::config(format!("non-finite parameter value {bad}")));
        }
        let conv_out_lens = arch.conv_out_lens(d)?;
        let flat_len = arch.flat_len(d)?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Vec<f64> {
            let v = flat[pos..pos + n].to_vec();
            pos += n;
            v
        };
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        for (l, c) in arch.convs.iter().enumerate() {
            let in_c = arch.in_channels(l);
            conv_w.push(take(c.out_channels * in_c * c.kernel));
            conv_b.push(take(c.out_channels));
        }
        let fc1_w = take(arch.hidden * flat_len);
        let fc1_b = take(arch.hidden);
        let fc2_w = take(2 * arch.hidden);
        let fc2_b = take(2);
        debug_assert_eq!(pos, expected);
        Ok(DetectorParams {
            input_mean: vec![0.0; d],
            input_scale: 1.0,
            arch,
            d,
            conv_out_lens,
            conv_w,
            conv_b,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        })
    }

    /// All parameters in documented order: per conv layer weights then
    /// bias, then fc1 weights, fc1 bias, fc2 weights, fc2 bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.conv_w.iter().zip(&self.conv_b) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.fc1_w);
        out.extend_from_slice(&self.fc1_b);
        out.extend_from_slice(&self.fc2_w);
        out.extend_from_slice(&self.fc2_b);
        out
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    /// Input length the detector was built for.
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count(self.d).expect("validated at construction")
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::shape(format!(
                "input has {} samples, detector expects {}",
                x.len(),
                self.d
            )));
        }
        Ok(())
    }

    #[allow(clippy::needless_range_loop)]
    fn forward_cache(&self, x: &[f64]) -> Result<Cache> {
        self.check_input(x)?;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.arch.convs.len() + 1);
        let mut pres: Vec<Vec<f64>> = Vec::with_capacity(self.arch.convs.len());
        let n = self.d as f64;
        let mean = x.iter().sum::<f64>() / n;
        acts.push(
            x.iter()
                .zip(&self.input_mean)
                .map(|(v, m)| (v - mean - m) / self.input_scale)
                .collect(),
        );
        let mut in_len = self.d;
        for (l, c) in self.arch.convs.iter().enumerate() {
            let in_c = self.arch.in_channels(l);
            let out_len = self.conv_out_lens[l];
            let input = &acts[l];
            let w = &self.conv_w[l];
            let mut pre = vec![0.0; c.out_channels * out_len];
            for o in 0..c.out_channels {
                for j in 0..out_len {
                    let mut z = self.conv_b[l][o];
                    let start = j * c.stride;
                    for i in 0..in_c {
                        let wrow = &w[(o * in_c + i) * c.kernel..(o * in_c + i + 1) * c.kernel];
                        let xrow = &input[i * in_len + start..i * in_len + start + c.kernel];
                        for (wv, xv) in wrow.iter().zip(xrow) {
                            z += wv * xv;
                        }
                    }
                    pre[o * out_len + j] = z;
                }
            }
            let post: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
            pres.push(pre);
            acts.push(post);
            in_len = out_len;
        }
        let flat = acts.last().expect("at least the input");
        let hidden = self.arch.hidden;
        let mut fc1_pre = vec![0.0; hidden];
        for (h, pre) in fc1_pre.iter_mut().enumerate() {
            let mut z = self.fc1_b[h];
            let wrow = &self.fc1_w[h * flat.len()..(h + 1) * flat.len()];
            for (wv, xv) in wrow.iter().zip(flat) {
                z += wv * xv;
            }
            *pre = z;
        }
        let fc1_post: Vec<f64> = fc1_pre.iter().map(|&z| z.max(0.0)).collect();
        let mut logits = [0.0f64; 2];
        for (c, logit) in logits.iter_mut().enumerate() {
            let mut z = self.fc2_b[c];
            for h in 0..hidden {
                z += self.fc2_w[c * hidden + h] * fc1_post[h];
            }
            *logit = z;
        }
        let probs = softmax2(logits);
        Ok(Cache {
            acts,
            pres,
            fc1_pre,
            fc1_post,
            logits,
            probs,
        })
    }

    /// Raw class scores `[benign, ht]`.
    pub fn forward(&self, x: &[f64]) -> Result<[f64; 2]> {
        Ok(self.forward_cache(x)?.logits)
    }

    /// Softmax class probabilities `[benign, ht]`.
    pub fn probabilities(&self, x: &[f64]) -> Result<[f64; 2]> {
        Ok(self.forward_cache(x)?.probs)
    }

    /// Hard decision. An exact logit tie resolves to benign.
    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        let logits = self.forward(x)?;
        Ok(if logits[1] > logits[0] {
            Label::Ht
        } else {
            Label::Benign
        })
    }

    /// Cross-entropy of the true class, floored at 1e-12 probability so
    /// the value stays finite.
    pub fn loss(&self, x: &[f64], label: Label) -> Result<f64> {
        let probs = self.probabilities(x)?;
        Ok(-probs[label.class_id() as usize].max(PROB_FLOOR).ln())
    }

    /// Analytic gradient of the loss with respect to the input samples.
    pub fn input_gradient(&self, x: &[f64], label: Label) -> Result<Vec<f64>> {
        let cache = self.forward_cache(x)?;
        Ok(self.backward(&cache, label, None))
    }

    /// Loss value and input gradient from a single forward/backward
    /// pass.
    pub fn loss_and_input_gradient(&self, x: &[f64], label: Label) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward_cache(x)?;
        let loss = -cache.probs[label.class_id() as usize].max(PROB_FLOOR).ln();
        let dx = self.backward(&cache, label, None);
        Ok((loss, dx))
    }

    /// Backpropagation. Accumulates parameter gradients into `grad`
    /// when given one; always returns the input gradient. The gradient
    /// of the loss in the logits is the exact softmax cross-entropy
    /// expression `p - y` (the reporting floor does not affect it).
    #[allow(clippy::needless_range_loop)]
    fn backward(&self, cache: &Cache, label: Label, grad: Option<&mut Grad>) -> Vec<f64> {
        let hidden = self.arch.hidden;
        let flat = cache.acts.last().expect("input present");
        let mut dz2 = cache.probs;
        dz2[label.class_id() as usize] -= 1.0;

        let mut dh = vec![0.0; hidden];
        for c in 0..2 {
            for h in 0..hidden {
                dh[h] += dz2[c] * self.fc2_w[c * hidden + h];
            }
        }
        for (h, v) in dh.iter_mut().enumerate() {
            if cache.fc1_pre[h] <= 0.0 {
                *v = 0.0;
            }
        }
        let mut dflat = vec![0.0; flat.len()];
        for h in 0..hidden {
            if dh[h] == 0.0 {
                continue;
            }
            let wrow = &self.fc1_w[h * flat.len()..(h + 1) * flat.len()];
            for (df, wv) in dflat.iter_mut().zip(wrow) {
                *df += dh[h] * wv;
            }
        }

        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            for c in 0..2 {
                g.fc2_b[c] += dz2[c];
                for h in 0..hidden {
                    g.fc2_w[c * hidden + h] += dz2[c] * cache.fc1_post[h];
                }
            }
            for h in 0..hidden {
                if dh[h] == 0.0 {
                    continue;
                }
                g.fc1_b[h] += dh[h];
                let grow = &mut g.fc1_w[h * flat.len()..(h + 1) * flat.len()];
                for (gv, xv) in grow.iter_mut().zip(flat) {
                    *gv += dh[h] * xv;
                }
            }
        }

        // Walk the conv stack backwards; dpost starts as dflat.
        let mut dpost = dflat;
        for l in (0..self.arch.convs.len()).rev() {
            let c = &self.arch.convs[l];
            let in_c = self.arch.in_channels(l);
            let out_len = self.conv_out_lens[l];
            let in_len = if l == 0 {
                self.d
            } else {
                self.conv_out_lens[l - 1]
            };
            let input = &cache.acts[l];
            let mut dpre = dpost;
            for (p, d) in cache.pres[l].iter().zip(dpre.iter_mut()) {
                if *p <= 0.0 {
                    *d = 0.0;
                }
            }
            let mut din = vec![0.0; in_c * in_len];
            let w = &self.conv_w[l];
            for o in 0..c.out_channels {
                for j in 0..out_len {
                    let g = dpre[o * out_len + j];
                    if g == 0.0 {
                        continue;
                    }
                    let start = j * c.stride;
                    for i in 0..in_c {
                        let base = (o * in_c + i) * c.kernel;
                        for t in 0..c.kernel {
                            din[i * in_len + start + t] += g * w[base + t];
                        }
                    }
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                for o in 0..c.out_channels {
                    for j in 0..out_len {
                        let gv = dpre[o * out_len + j];
                        if gv == 0.0 {
                            continue;
                        }
                        g.conv_b[l][o] += gv;
                        let start = j * c.stride;
                        for i in 0..in_c {
                            let base = (o * in_c + i) * c.kernel;
                            for t in 0..c.kernel {
                                g.conv_w[l][base + t] += gv * input[i * in_len + start + t];
                            }
                        }
                    }
                }
            }
            dpost = din;
        }
        // dpost is the gradient in preprocessed coordinates; pull it
        // back through z_i = (x_i - mean(x) - m_i) / r:
        // dJ/dx_j = (g_j - mean(g)) / r.
        let n = self.d as f64;
        let g_mean = dpost.iter().sum::<f64>() / n;
        dpost
            .iter()
            .map(|g| (g - g_mean) / self.input_scale)
            .collect()
    }
}

fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Train a fresh detector on `dataset`.
///
/// Returns the trained weights and per-epoch statistics. Deterministic
/// in `config.seed`.
pub fn train(
    dataset: &TraceDataset,
    arch: &ArchitectureSpec,
    config: &TrainConfig,
) -> Result<(DetectorParams, Vec<EpochStats>)> {
    train_impl(dataset, arch, config, |_, item| {
        Ok(item.trace.samples().to_vec())
    })
}

/// Preprocessing constants frozen from a training set: the
/// per-position mean of the per-trace centered traces, plus one global
/// standard deviation of the remaining residuals (1.0 for a perfectly
/// constant dataset).
pub fn standardization_of(dataset: &TraceDataset) -> (Vec<f64>, f64) {
    let d = dataset.d();
    let n = dataset.len() as f64;
    let centered: Vec<Vec<f64>> = dataset
        .items()
        .iter()
        .map(|item| {
            let x = item.trace.samples();
            let mean = x.iter().sum::<f64>() / d as f64;
            x.iter().map(|v| v - mean).collect()
        })
        .collect();
    let mut mean = vec![0.0; d];
    for u in &centered {
        for (m, v) in mean.iter_mut().zip(u) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = 0.0;
    for u in &centered {
        for (m, v) in mean.iter().zip(u) {
            var += (v - m) * (v - m);
        }
    }
    var /= n * d as f64;
    let scale = var.sqrt();
    (mean, if scale > 0.0 { scale } else { 1.0 })
}

/// Shared training loop. `perturb` maps each example to the sample
/// vector actually trained on; plain training passes the identity, the
/// adversarial-training defense substitutes a PGD perturbation.
pub(crate) fn train_impl<F>(
    dataset: &TraceDataset,
    arch: &ArchitectureSpec,
    config: &TrainConfig,
    mut perturb: F,
) -> Result<(DetectorParams, Vec<EpochStats>)>
where
    F: FnMut(&DetectorParams, &LabeledTrace) -> Result<Vec<f64>>,
{
    config.validate()?;
    if !dataset.has_both_classes() {
        return Err(Error::config(
            "training requires at least one trace of each class",
        ));
    }
    let (mean, scale) = standardization_of(dataset);
    let mut params = DetectorParams::init(arch.clone(), dataset.d(), config.seed)?
        .with_standardization(mean, scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seeds::derive_seed(config.seed, "shuffle"));
    let mut velocity = Grad::zeros_of(&params);
    let mut batch_grad = Grad::zeros_of(&params);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut stats = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in indices.chunks(config.batch_size) {
            batch_grad.fill_zero();
            for &idx in batch {
                let item = &dataset.items()[idx];
                let x = perturb(&params, item)?;
                let cache = params.forward_cache(&x)?;
                let p = cache.probs[item.label.class_id() as usize];
                loss_sum += -p.max(PROB_FLOOR).ln();
                let predicted = if cache.logits[1] > cache.logits[0] {
                    Label::Ht
                } else {
                    Label::Benign
                };
                if predicted == item.label {
                    correct += 1;
                }
                params.backward(&cache, item.label, Some(&mut batch_grad));
            }
            let scale = 1.0 / batch.len() as f64;
            sgd_step(
                &mut params,
                &batch_grad,
                &mut velocity,
                config.learning_rate * scale,
                config.momentum,
            );
        }
        stats.push(EpochStats {
            epoch,
            mean_loss: loss_sum / dataset.len() as f64,
            accuracy_percent: 100.0 * correct as f64 / dataset.len() as f64,
        });
    }
    Ok((params, stats))
}

/// One momentum SGD step: `v = momentum * v - lr * g; w += v`.
fn sgd_step(p: &mut DetectorParams, g: &Grad, v: &mut Grad, lr: f64, momentum: f64) {
    fn upd(w: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, momentum: f64) {
        for i in 0..w.len() {
            v[i] = momentum * v[i] - lr * g[i];
            w[i] += v[i];
        }
    }
    for l in 0..p.conv_w.len() {
        upd(&mut p.conv_w[l], &g.conv_w[l], &mut v.conv_w[l], lr, momentum);
        upd(&mut p.conv_b[l], &g.conv_b[l], &mut v.conv_b[l], lr, momentum);
    }
    upd(&mut p.fc1_w, &g.fc1_w, &mut v.fc1_w, lr, momentum);
    upd(&mut p.fc1_b, &g.fc1_b, &mut v.fc1_b, lr, momentum);
    upd(&mut p.fc2_w, &g.fc2_w, &mut v.fc2_w, lr, momentum);
    upd(&mut p.fc2_b, &g.fc2_b, &mut v.fc2_b, lr, momentum);
}

/// Per-class and overall accuracy of `params` on `dataset`, in percent.
pub fn accuracy(params: &DetectorParams, dataset: &TraceDataset) -> Result<Accuracy> {
    let mut correct = [0usize; 2];
    let mut total = [0usize; 2];
    for item in dataset.items() {
        let c = item.label.class_id() as usize;
        total[c] += 1;
        if params.predict(item.trace.samples())? == item.label {
            correct[c] += 1;
        }
    }
    let pct = |c: usize| -> Option<f64> {
        (total[c] > 0).then(|| 100.0 * correct[c] as f64 / total[c] as f64)
    };
    Ok(Accuracy {
        overall_percent: 100.0 * (correct[0] + correct[1]) as f64 / dataset.len() as f64,
        benign_percent: pct(0),
        ht_percent: pct(1),
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    arch: ArchitectureSpec,
    d: usize,
    input_mean: Vec<f64>,
    input_scale: f64,
    params: Vec<f64>,
}

const MODEL_FORMAT: &str = "hto-detector";
const MODEL_VERSION: u32 = 1;

/// Write the model as JSON. Parameters serialize with shortest
/// round-trip notation, so save followed by load is bit-exact.
pub fn save_model(params: &DetectorParams, path: impl AsRef<Path>) -> Result<()> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        arch: params.arch.clone(),
        d: params.d,
        input_mean: params.input_mean.clone(),
        input_scale: params.input_scale,
        params: params.to_flat(),
    };
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer(&mut w, &file).map_err(json_err)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Load a model written by [`save_model`], validating format tag,
/// version, and parameter count.
pub fn load_model(path: impl AsRef<Path>) -> Result<DetectorParams> {
    let r = BufReader::new(File::open(path.as_ref())?);
    let file: ModelFile = serde_json::from_reader(r).map_err(json_err)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::config(format!(
            "unexpected model format tag '{}'",
            file.format
        )));
    }
    if file.version != MODEL_VERSION {
        return Err(Error::config(format!(
            "unsupported model version {}",
            file.version
        )));
    }
    DetectorParams::from_flat(file.arch, file.d, &file.params)?
        .with_standardization(file.input_mean, file.input_scale)
}

pub(crate) fn json_err(e: serde_json::Error) -> Error {
    if e.is_io() {
        Error::Io(std::io::Error::other(e))
    } else {
        Error::Parse {
            row: e.line(),
            message: e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces::{synth_dataset, SynthConfig};

    fn tiny_arch() -> ArchitectureSpec {
        ArchitectureSpec {
            convs: vec![ConvSpec {
                out_channels: 1,
                kernel: 2,
                stride: 2,
            }],
            hidden: 2,
        }
    }

    #[test]
    fn out_lens_and_param_count_default_arch() {
        let arch = ArchitectureSpec::default();
        assert_eq!(arch.conv_out_lens(1000).unwrap(), vec![496, 244]);
        assert_eq!(arch.flat_len(1000).unwrap(), 8 * 244);
        // 4*1*9+4 = 40, 8*4*9+8 = 296, 64*1952+64 = 124992, 2*64+2 = 130.
        assert_eq!(arch.param_count(1000).unwrap(), 125_458);
    }

    #[test]
    fn rejects_arch_too_deep_for_input() {
        let arch = ArchitectureSpec::default();
        assert!(matches!(arch.conv_out_lens(10), Err(Error::Shape(_))));
    }

    #[test]
    fn init_is_deterministic_with_zero_biases_and_bounded_weights() {
        let a = DetectorParams::init(ArchitectureSpec::default(), 100, 5).unwrap();
        let b = DetectorParams::init(ArchitectureSpec::default(), 100, 5).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        assert!(a.conv_b.iter().flatten().all(|&v| v == 0.0));
        assert!(a.fc1_b.iter().all(|&v| v == 0.0));
        assert!(a.fc2_b.iter().all(|&v| v == 0.0));
        let bound1 = 1.0 / 9.0f64.sqrt();
        assert!(a.conv_w[0].iter().all(|&v| v.abs() <= bound1));
        let c = DetectorParams::init(ArchitectureSpec::default(), 100, 6).unwrap();
        assert_ne!(a.to_flat(), c.to_flat());
    }

    #[test]
    fn hand_computed_forward_pass() {
        // x = [4,4,4,4,6,6,6,6] centers to z = [-1,-1,-1,-1,1,1,1,1]
        //   (mean 5; identity frozen constants).
        // conv(out=1,k=2,s=2): pre[j] = 0.5*z[2j] - 0.25*z[2j+1]
        //   -> [-0.25, -0.25, 0.25, 0.25], ReLU -> [0, 0, 0.25, 0.25].
        // fc1: h0 = [1,0,-1,2]·post + 0.25 = 0.5; h1 = [-1,1,0,-0.5]·post
        //   - 0.1 = -0.225 -> ReLU 0.
        // fc2: z0 = 0.2*0.5 + 0.05 = 0.15; z1 = -0.1*0.5 - 0.05 = -0.1.
        let flat = vec![
            0.5, -0.25, 0.0, // conv w, b
            1.0, 0.0, -1.0, 2.0, -1.0, 1.0, 0.0, -0.5, // fc1 w
            0.25, -0.1, // fc1 b
            0.2, -0.4, -0.1, 0.3, // fc2 w
            0.05, -0.05, // fc2 b
        ];
        let p = DetectorParams::from_flat(tiny_arch(), 8, &flat).unwrap();
        assert_eq!(p.param_count(), 19);
        let x = [4.0, 4.0, 4.0, 4.0, 6.0, 6.0, 6.0, 6.0];
        let logits = p.forward(&x).unwrap();
        assert!((logits[0] - 0.15).abs() < 1e-9, "z0 = {}", logits[0]);
        assert!((logits[1] - -0.1).abs() < 1e-9, "z1 = {}", logits[1]);
        assert_eq!(p.predict(&x).unwrap(), Label::Benign);
        // loss(benign) = softplus(z1 - z0) = ln(1 + e^{-0.25})
        let expected = (1.0 + (-0.25f64).exp()).ln();
        assert!((p.loss(&x, Label::Benign).unwrap() - expected).abs() < 1e-9);
        let expected_ht = 0.25 + expected;
        assert!((p.loss(&x, Label::Ht).unwrap() - expected_ht).abs() < 1e-9);
    }

    #[test]
    fn all_zero_trace_maps_to_output_biases() {
        // A zero trace centers to exactly zero, so with zero conv and
        // hidden biases nothing propagates and the logits are the
        // output biases verbatim.
        let flat = vec![
            1.0, 1.0, 0.0, // conv w (all ones), b
            1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, // fc1 w
            0.0, 0.0, // fc1 b
            1.0, 1.0, 1.0, 1.0, // fc2 w
            0.3, -0.2, // fc2 b
        ];
        let p = DetectorParams::from_flat(tiny_arch(), 8, &flat).unwrap();
        let logits = p.forward(&[0.0; 8]).unwrap();
        assert_eq!(logits, [0.3, -0.2]);
        let probs = p.probabilities(&[0.0; 8]).unwrap();
        let expected = softmax2([0.3, -0.2]);
        assert_eq!(probs, expected);
    }

    #[test]
    fn prediction_is_offset_invariant() {
        // Per-trace centering cancels a constant power offset; only
        // floating-point rounding breaks the equality, far below 1e-6.
        let p = fd_params();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let x: Vec<f64> = (0..p.d()).map(|_| rng.gen_range(0.0..10.0)).collect();
            let offset: Vec<f64> = x.iter().map(|v| v + 7.0).collect();
            let a = p.forward(&x).unwrap();
            let b = p.forward(&offset).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn tie_resolves_to_benign() {
        let p = DetectorParams::from_flat(tiny_arch(), 8, &[0.0; 19]).unwrap();
        let x = [1.0; 8];
        assert_eq!(p.forward(&x).unwrap(), [0.0, 0.0]);
        assert_eq!(p.predict(&x).unwrap(), Label::Benign);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let p = DetectorParams::init(tiny_arch(), 8, 0).unwrap();
        assert!(matches!(p.forward(&[1.0; 9]), Err(Error::Shape(_))));
    }

    fn fd_arch() -> (ArchitectureSpec, usize) {
        (
            ArchitectureSpec {
                convs: vec![
                    ConvSpec {
                        out_channels: 2,
                        kernel: 3,
                        stride: 2,
                    },
                    ConvSpec {
                        out_channels: 2,
                        kernel: 3,
                        stride: 1,
                    },
                ],
                hidden: 4,
            },
            16,
        )
    }

    /// Nontrivial frozen constants so the checks cover the whole
    /// preprocessing chain rule.
    fn fd_params() -> DetectorParams {
        let (arch, d) = fd_arch();
        let mean: Vec<f64> = (0..d).map(|i| 0.05 * i as f64 - 0.4).collect();
        DetectorParams::init(arch, d, 42)
            .unwrap()
            .with_standardization(mean, 1.7)
            .unwrap()
    }

    fn assert_close_rel(analytic: &[f64], numeric: &[f64]) {
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            if a.abs() < 1e-8 && n.abs() < 1e-8 {
                continue;
            }
            let rel = (a - n).abs() / a.abs().max(n.abs());
            assert!(
                rel <= 1e-4,
                "entry {i}: analytic {a} vs numeric {n} (rel {rel})"
            );
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let (_, d) = fd_arch();
        let p = fd_params();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..10.0)).collect();
        let h = 1e-5;
        for label in [Label::Benign, Label::Ht] {
            let analytic = p.input_gradient(&x, label).unwrap();
            let mut numeric = vec![0.0; d];
            for (i, nv) in numeric.iter_mut().enumerate() {
                let mut xp = x.clone();
                xp[i] += h;
                let lp = p.loss(&xp, label).unwrap();
                xp[i] = x[i] - h;
                let lm = p.loss(&xp, label).unwrap();
                *nv = (lp - lm) / (2.0 * h);
            }
            assert_close_rel(&analytic, &numeric);
        }
    }

    #[test]
    fn param_gradient_matches_finite_differences() {
        let (arch, d) = fd_arch();
        let p = fd_params();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..10.0)).collect();
        let label = Label::Ht;
        let mut grad = Grad::zeros_of(&p);
        let cache = p.forward_cache(&x).unwrap();
        p.backward(&cache, label, Some(&mut grad));
        let mut analytic = Vec::new();
        for (w, b) in grad.conv_w.iter().zip(&grad.conv_b) {
            analytic.extend_from_slice(w);
            analytic.extend_from_slice(b);
        }
        analytic.extend_from_slice(&grad.fc1_w);
        analytic.extend_from_slice(&grad.fc1_b);
        analytic.extend_from_slice(&grad.fc2_w);
        analytic.extend_from_slice(&grad.fc2_b);

        let flat = p.to_flat();
        let h = 1e-5;
        let perturbed = |fp: &[f64]| {
            DetectorParams::from_flat(arch.clone(), d, fp)
                .unwrap()
                .with_standardization(p.input_mean().to_vec(), p.input_scale())
                .unwrap()
        };
        let mut numeric = vec![0.0; flat.len()];
        for i in 0..flat.len() {
            let mut fp = flat.clone();
            fp[i] += h;
            let lp = perturbed(&fp).loss(&x, label).unwrap();
            fp[i] = flat[i] - h;
            let lm = perturbed(&fp).loss(&x, label).unwrap();
            numeric[i] = (lp - lm) / (2.0 * h);
        }
        assert_close_rel(&analytic, &numeric);
    }

    fn easy_dataset() -> TraceDataset {
        synth_dataset(&SynthConfig {
            d: 64,
            n_per_class: 40,
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
            epochs: 15,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 3,
        }
    }

    #[test]
    fn training_learns_an_easy_task_and_is_deterministic() {
        let ds = easy_dataset();
        let cfg = small_train_config();
        let (p, stats) = train(&ds, &small_arch(), &cfg).unwrap();
        assert_eq!(stats.len(), cfg.epochs);
        let acc = accuracy(&p, &ds).unwrap();
        assert!(
            acc.overall_percent >= 90.0,
            "trained accuracy only {}%",
            acc.overall_percent
        );
        assert!(stats.last().unwrap().mean_loss < stats[0].mean_loss);
        let (p2, stats2) = train(&ds, &small_arch(), &cfg).unwrap();
        assert_eq!(p.to_flat(), p2.to_flat());
        assert_eq!(stats, stats2);
    }

    #[test]
    fn zero_learning_rate_keeps_initial_weights() {
        let ds = easy_dataset();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..small_train_config()
        };
        let (p, _) = train(&ds, &small_arch(), &cfg).unwrap();
        let fresh = DetectorParams::init(small_arch(), ds.d(), cfg.seed).unwrap();
        assert_eq!(p.to_flat(), fresh.to_flat());
    }

    #[test]
    fn training_rejects_single_class_data() {
        let ds = easy_dataset();
        let benign_only = TraceDataset::new(
            ds.items()
                .iter()
                .filter(|it| it.label == Label::Benign)
                .cloned()
                .collect(),
            "benign-only",
        )
        .unwrap();
        assert!(matches!(
            train(&benign_only, &small_arch(), &small_train_config()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn accuracy_reports_absent_class_as_none() {
        let ds = easy_dataset();
        let p = DetectorParams::init(small_arch(), ds.d(), 1).unwrap();
        let ht_only = TraceDataset::new(
            ds.items()
                .iter()
                .filter(|it| it.label == Label::Ht)
                .cloned()
                .collect(),
            "ht-only",
        )
        .unwrap();
        let acc = accuracy(&p, &ht_only).unwrap();
        assert!(acc.benign_percent.is_none());
        assert!(acc.ht_percent.is_some());
    }

    #[test]
    fn model_save_load_round_trip_is_bit_exact() {
        let mean: Vec<f64> = (0..200).map(|i| (i as f64) / 7.0 - 2.0).collect();
        let p = DetectorParams::init(ArchitectureSpec::default(), 200, 21)
            .unwrap()
            .with_standardization(mean, 2.0 / 3.0)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&p, &path).unwrap();
        let q = load_model(&path).unwrap();
        assert_eq!(q.arch(), p.arch());
        assert_eq!(q.d(), p.d());
        assert_eq!(q.input_scale().to_bits(), p.input_scale().to_bits());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p.to_flat()), bits(&q.to_flat()));
        assert_eq!(bits(p.input_mean()), bits(q.input_mean()));
    }

    #[test]
    fn model_load_rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"format\":\"hto-detector\"").unwrap();
        assert!(matches!(load_model(&path), Err(Error::Parse { .. })));
        std::fs::write(
            &path,
            "{\"format\":\"other\",\"version\":1,\"arch\":{\"convs\":[],\"hidden\":1},\
             \"d\":8,\"input_mean\":[0,0,0,0,0,0,0,0],\"input_scale\":1.0,\"params\":[]}",
        )
        .unwrap();
        assert!(matches!(load_model(&path), Err(Error::Config(_))));
    }

    #[test]
    fn untrained_default_detector_loss_is_near_ln2() {
        let ds = synth_dataset(&SynthConfig::default()).unwrap();
        let p = DetectorParams::init(ArchitectureSpec::default(), ds.d(), 123).unwrap();
        let mut sum = 0.0;
        for it in ds.items() {
            sum += p.loss(it.trace.samples(), it.label).unwrap();
        }
        let mean = sum / ds.len() as f64;
        let ln2 = std::f64::consts::LN_2;
        assert!(
            (mean - ln2).abs() <= 0.2,
            "mean untrained loss {mean} strays from ln2 = {ln2}"
        );
    }
}
