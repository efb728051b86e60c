//! Frequency-domain machinery: DFT/IDFT, power spectral density, band
//! selection, band-pass filtering, and spectral clipping of patches.
//!
//! Convention: `dft` is the plain unnormalized sum
//! `S(k) = sum_n s(n) exp(-2*pi*i*n*k/N)`; `idft` carries the 1/N. The
//! production transform is rustfft; tests hold it to the direct
//! summation within 1e-9 per bin. Frequencies are in Hz, derived from
//! the trace sampling period in µs.

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

pub use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::traces::TraceDataset;

/// Discrete spectrum of a signal, bin k at frequency `k * bin_width_hz`
/// (frequencies above Nyquist alias to their negative mirror).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    pub bin_width_hz: f64,
}

/// Pass band `[f_min_hz, f_max_hz]`. Validity against a concrete signal
/// (f_max at most Nyquist) is checked where the filter is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPassFilter {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
}

impl BandPassFilter {
    pub fn new(f_min_hz: f64, f_max_hz: f64) -> Result<Self> {
        if !(f_min_hz.is_finite() && f_max_hz.is_finite() && 0.0 <= f_min_hz && f_min_hz < f_max_hz)
        {
            return Err(Error::config(format!(
                "band [{f_min_hz}, {f_max_hz}] Hz is not a valid pass band"
            )));
        }
        Ok(BandPassFilter { f_min_hz, f_max_hz })
    }

    pub(crate) fn validate_for(&self, sample_period_us: f64) -> Result<()> {
        let nyq = nyquist_hz(sample_period_us)?;
        if self.f_max_hz > nyq {
            return Err(Error::config(format!(
                "band edge {} Hz exceeds the Nyquist frequency {nyq} Hz",
                self.f_max_hz
            )));
        }
        Ok(())
    }
}

/// Width of one DFT bin in Hz for an `n`-point transform.
pub fn bin_width_hz(n: usize, sample_period_us: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::shape("empty signal has no spectrum"));
    }
    check_period(sample_period_us)?;
    Ok(1e6 / (n as f64 * sample_period_us))
}

/// Nyquist frequency in Hz for the given sampling period.
pub fn nyquist_hz(sample_period_us: f64) -> Result<f64> {
    check_period(sample_period_us)?;
    Ok(0.5e6 / sample_period_us)
}

fn check_period(sample_period_us: f64) -> Result<()> {
    if !(sample_period_us.is_finite() && sample_period_us > 0.0) {
        return Err(Error::config(format!(
            "sample period must be > 0 µs, got {sample_period_us}"
        )));
    }
    Ok(())
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_forward(buf: &mut [Complex64]) {
    PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft_forward(buf.len());
        fft.process(buf);
    });
}

fn fft_inverse(buf: &mut [Complex64]) {
    PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft_inverse(buf.len());
        fft.process(buf);
    });
}

/// Forward transform of a real signal.
pub fn dft(signal: &[f64], sample_period_us: f64) -> Result<Spectrum> {
    let bin_width_hz = bin_width_hz(signal.len(), sample_period_us)?;
    let mut bins: Vec<Complex64> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_forward(&mut bins);
    Ok(Spectrum { bins, bin_width_hz })
}

/// Inverse transform; returns the real part (the imaginary residue of a
/// spectrum originating from a real signal is below 1e-9 and dropped).
pub fn idft(spectrum: &Spectrum) -> Vec<f64> {
    let n = spectrum.bins.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf = spectrum.bins.clone();
    fft_inverse(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Power spectral density `|S(k)|^2 / N`; satisfies Parseval:
/// `sum_k psd[k] = sum_n s(n)^2`.
pub fn psd(signal: &[f64]) -> Result<Vec<f64>> {
    let spectrum = dft(signal, 1.0)?;
    let n = signal.len() as f64;
    Ok(spectrum.bins.iter().map(|c| c.norm_sqr() / n).collect())
}

/// Smallest prefix band `[0, f_max]` capturing at least
/// `energy_fraction` of the mean PSD over all traces in the dataset.
///
/// The mean one-sided PSD (mirrored bins folded together) is summed from
/// DC upward; the band edge lands half a bin above the last bin needed,
/// clamped to Nyquist.
pub fn choose_band(dataset: &TraceDataset, energy_fraction: f64) -> Result<BandPassFilter> {
    if !(energy_fraction.is_finite() && 0.0 < energy_fraction && energy_fraction < 1.0) {
        return Err(Error::config(format!(
            "energy_fraction must lie strictly between 0 and 1, got {energy_fraction}"
        )));
    }
    let n = dataset.d();
    let delta_f = bin_width_hz(n, dataset.sample_period_us())?;
    let mut mean_psd = vec![0.0; n];
    for item in dataset.items() {
        for (acc, p) in mean_psd.iter_mut().zip(psd(item.trace.samples())?) {
            *acc += p;
        }
    }
    // One-sided fold: bin k and its mirror N-k carry the same |frequency|.
    let half = n / 2;
    let mut folded = vec![0.0; half + 1];
    for (k, f) in folded.iter_mut().enumerate() {
        *f = mean_psd[k];
        let mirror = (n - k) % n;
        if mirror != k {
            *f += mean_psd[mirror];
        }
    }
    let total: f64 = folded.iter().sum();
    let mut cum = 0.0;
    let mut edge_bin = half;
    for (k, f) in folded.iter().enumerate() {
        cum += f;
        if cum >= energy_fraction * total {
            edge_bin = k;
            break;
        }
    }
    let nyq = nyquist_hz(dataset.sample_period_us())?;
    let f_max = ((edge_bin as f64 + 0.5) * delta_f).min(nyq);
    BandPassFilter::new(0.0, f_max)
}

/// Absolute center frequency of bin `k` of an `n`-point transform.
fn bin_freq(k: usize, n: usize, delta_f: f64) -> f64 {
    if 2 * k <= n {
        k as f64 * delta_f
    } else {
        (n - k) as f64 * delta_f
    }
}

/// Zero every bin whose center frequency falls outside the band, then
/// transform back. A linear, idempotent projection; mirrored bins are
/// treated symmetrically so real signals stay real.
pub fn band_pass(
    signal: &[f64],
    sample_period_us: f64,
    filter: &BandPassFilter,
) -> Result<Vec<f64>> {
    filter.validate_for(sample_period_us)?;
    let mut spectrum = dft(signal, sample_period_us)?;
    let n = spectrum.bins.len();
    for (k, bin) in spectrum.bins.iter_mut().enumerate() {
        let f = bin_freq(k, n, spectrum.bin_width_hz);
        if f < filter.f_min_hz || f > filter.f_max_hz {
            *bin = Complex::new(0.0, 0.0);
        }
    }
    Ok(idft(&spectrum))
}

/// Spectral projection of a candidate patch; identical mathematics to
/// [`band_pass`]. The caller is responsible for restoring the magnitude
/// budget afterwards, which this projection can violate.
pub fn spectral_clip(
    delta: &[f64],
    sample_period_us: f64,
    filter: &BandPassFilter,
) -> Result<Vec<f64>> {
    band_pass(delta, sample_period_us, filter)
}

/// One-sided magnitude spectrum as `(frequency_hz, magnitude)` rows,
/// `N/2 + 1` of them, for reporting and plotting.
pub fn spectrum_report(signal: &[f64], sample_period_us: f64) -> Result<Vec<(f64, f64)>> {
    let spectrum = dft(signal, sample_period_us)?;
    let n = spectrum.bins.len();
    Ok((0..=n / 2)
        .map(|k| (k as f64 * spectrum.bin_width_hz, spectrum.bins[k].norm()))
        .collect())
}
