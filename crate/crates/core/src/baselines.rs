//! Sample-domain reference detectors: NEO, ED-LPF and absolute threshold.

use alloc::vec;
use alloc::vec::Vec;

use crate::evspd::Trigger;
use crate::{Error, Micros, Result};

/// MAD-to-sigma constant for Gaussian noise.
const MAD_SCALE: f64 = 0.6745;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineParams {
    /// Smoothing window for NEO and ED-LPF, in samples.
    pub neo_window: usize,
    /// Threshold as a multiple of the mean smoothed emphasizer.
    pub neo_thresh_mult: f64,
    /// Absolute-threshold multiplier on the noise estimate.
    pub abs_mult: f64,
    pub refractory_us: Micros,
}

impl BaselineParams {
    /// Defaults with a 1 ms smoothing window at `sample_rate_hz`.
    pub fn for_sample_rate(sample_rate_hz: f64) -> Self {
        BaselineParams {
            neo_window: (libm::round(1e-3 * sample_rate_hz) as usize).max(1),
            neo_thresh_mult: 5.0,
            abs_mult: 4.0,
            refractory_us: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.neo_window < 1 {
            return Err(Error::InvalidParams("neo_window must be at least 1"));
        }
        if !(self.neo_thresh_mult > 0.0) || !(self.abs_mult > 0.0) {
            return Err(Error::InvalidParams("threshold multipliers must be positive"));
        }
        Ok(())
    }
}

/// Nonlinear energy operator `x[n]^2 - x[n-1] x[n+1]`, zero at both ends.
pub fn neo(signal: &[f64]) -> Result<Vec<f64>> {
    if signal.len() < 3 {
        return Err(Error::TooShort { needed: 3, got: signal.len() });
    }
    let mut psi = vec![0.0; signal.len()];
    for (i, w) in signal.windows(3).enumerate() {
        psi[i + 1] = w[1] * w[1] - w[0] * w[2];
    }
    Ok(psi)
}

/// Centered moving average over `window` samples, zero outside the signal.
fn smooth_centered(x: &[f64], window: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        prefix.push(acc);
    }
    let half = window / 2;
    (0..x.len())
        .map(|n| {
            let lo = n.saturating_sub(half);
            let hi = (n + window - half).min(x.len());
            (prefix[hi] - prefix[lo]) / window as f64
        })
        .collect()
}

/// Squared first difference filtered by a causal rectangular kernel of
/// `window` taps with unit sum.
pub fn ed_lpf(signal: &[f64], window: usize) -> Result<Vec<f64>> {
    if signal.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: signal.len() });
    }
    if window == 0 {
        return Err(Error::InvalidParams("window must be at least 1"));
    }
    let mut out = Vec::with_capacity(signal.len());
    let mut sq = vec![0.0; signal.len()];
    let mut acc = 0.0;
    for n in 0..signal.len() {
        if n > 0 {
            let d = signal[n] - signal[n - 1];
            sq[n] = d * d;
        }
        acc += sq[n];
        if n >= window {
            acc -= sq[n - window];
        }
        out.push((acc / window as f64).max(0.0));
    }
    Ok(out)
}

fn sample_time_us(n: usize, fs: f64) -> Micros {
    libm::round(n as f64 * 1e6 / fs) as Micros
}

/// Rising-edge crossings of `thr` with a refractory gate.
fn crossings(values: impl Iterator<Item = f64>, thr: f64, fs: f64, refractory_us: Micros) -> Vec<Micros> {
    let mut trig = Trigger::new(refractory_us);
    values
        .enumerate()
        .filter_map(|(n, v)| {
            let t = sample_time_us(n, fs);
            trig.update(v > thr, t).then_some(t)
        })
        .collect()
}

/// Smoothed NEO thresholded at `neo_thresh_mult` times its mean.
pub fn neo_detect(signal: &[f64], sample_rate_hz: f64, params: &BaselineParams) -> Result<Vec<Micros>> {
    params.validate()?;
    let smoothed = smooth_centered(&neo(signal)?, params.neo_window);
    let thr = params.neo_thresh_mult * mean(&smoothed);
    if !(thr > 0.0) {
        return Ok(Vec::new());
    }
    Ok(crossings(smoothed.into_iter(), thr, sample_rate_hz, params.refractory_us))
}

/// ED-LPF thresholded at `neo_thresh_mult` times its mean.
pub fn edlpf_detect(signal: &[f64], sample_rate_hz: f64, params: &BaselineParams) -> Result<Vec<Micros>> {
    params.validate()?;
    let e = ed_lpf(signal, params.neo_window)?;
    let thr = params.neo_thresh_mult * mean(&e);
    if !(thr > 0.0) {
        return Ok(Vec::new());
    }
    Ok(crossings(e.into_iter(), thr, sample_rate_hz, params.refractory_us))
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

/// `abs_mult * median(|x|) / 0.6745`.
pub fn abs_threshold(signal: &[f64], abs_mult: f64) -> f64 {
    if signal.is_empty() {
        return 0.0;
    }
    let mut mags: Vec<f64> = signal.iter().map(|v| libm::fabs(*v)).collect();
    let n = mags.len();
    let mid = n / 2;
    let (lower, upper, _) = mags.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let median = if n % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (below + upper) / 2.0
    };
    abs_mult * median / MAD_SCALE
}

/// Rising-edge crossings of `|x|` over the absolute threshold.
pub fn abs_threshold_detect(signal: &[f64], sample_rate_hz: f64, abs_mult: f64, refractory_us: Micros) -> Vec<Micros> {
    let thr = abs_threshold(signal, abs_mult);
    crossings(signal.iter().map(|v| libm::fabs(*v)), thr, sample_rate_hz, refractory_us)
}
