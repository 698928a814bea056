//! Multi-channel recordings: synthesis with ground truth, band-pass
//! filtering and SNR estimation.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::{Error, Result};

/// Spike waveforms span this long.
pub const SPIKE_WINDOW_S: f64 = 1e-3;

/// Default action-potential band.
pub const DEFAULT_LOW_HZ: f64 = 300.0;
pub const DEFAULT_HIGH_HZ: f64 = 3000.0;

/// Multi-channel sampled signal, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub sample_rate_hz: f64,
    pub samples: Vec<Vec<f64>>,
    /// Per-channel spike onset times in seconds, sorted.
    pub ground_truth: Option<Vec<Vec<f64>>>,
}

impl Recording {
    pub fn new(sample_rate_hz: f64, samples: Vec<Vec<f64>>, ground_truth: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidSampleRate(sample_rate_hz));
        }
        if let Some(first) = samples.first() {
            if samples.iter().any(|c| c.len() != first.len()) {
                return Err(Error::RaggedChannels);
            }
        }
        if let Some(truth) = &ground_truth {
            if truth.len() != samples.len() {
                return Err(Error::ShapeMismatch);
            }
        }
        let rec = Recording { sample_rate_hz, samples, ground_truth };
        if let Some(truth) = &rec.ground_truth {
            let d = rec.duration_s();
            if truth.iter().flatten().any(|&t| !(0.0..d).contains(&t)) {
                return Err(Error::InvalidParams("ground-truth time outside the recording"));
            }
        }
        Ok(rec)
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }
}

/// A spike waveform sampled at its own rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl Template {
    /// Builds a template scaled so its largest absolute value is 1.
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidSampleRate(sample_rate_hz));
        }
        let peak = samples.iter().fold(0.0f64, |m, x| m.max(libm::fabs(*x)));
        if samples.is_empty() || peak == 0.0 {
            return Err(Error::EmptyTemplate);
        }
        Ok(Template { samples: samples.into_iter().map(|x| x / peak).collect(), sample_rate_hz })
    }

    pub fn builtin(kind: BuiltinTemplate, sample_rate_hz: f64) -> Self {
        let n = libm::round(SPIKE_WINDOW_S * sample_rate_hz).max(2.0) as usize;
        let lobes = kind.lobes();
        let samples = (0..n)
            .map(|i| {
                let t_ms = i as f64 * 1e3 / sample_rate_hz;
                lobes
                    .iter()
                    .map(|&(a, mu, sigma)| {
                        let z = (t_ms - mu) / sigma;
                        a * libm::exp(-0.5 * z * z)
                    })
                    .sum()
            })
            .collect();
        Template::new(samples, sample_rate_hz).expect("builtin templates are non-degenerate")
    }

    /// All built-in templates at the given rate.
    pub fn builtin_set(sample_rate_hz: f64) -> Vec<Template> {
        BuiltinTemplate::ALL.iter().map(|&k| Template::builtin(k, sample_rate_hz)).collect()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Linear-interpolation resampling to `rate_hz`.
    pub fn resampled(&self, rate_hz: f64) -> Vec<f64> {
        if rate_hz == self.sample_rate_hz {
            return self.samples.clone();
        }
        let n = libm::round(self.duration_s() * rate_hz).max(1.0) as usize;
        let last = self.samples.len() - 1;
        (0..n)
            .map(|j| {
                let pos = j as f64 * self.sample_rate_hz / rate_hz;
                let i = libm::floor(pos) as usize;
                if i >= last {
                    return self.samples[last];
                }
                let frac = pos - i as f64;
                self.samples[i] * (1.0 - frac) + self.samples[i + 1] * frac
            })
            .collect()
    }
}

/// Built-in extracellular spike shapes, each with 1 ms support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinTemplate {
    Biphasic,
    BiphasicWide,
    Triphasic,
    PositiveLed,
}

impl BuiltinTemplate {
    pub const ALL: [BuiltinTemplate; 4] = [
        BuiltinTemplate::Biphasic,
        BuiltinTemplate::BiphasicWide,
        BuiltinTemplate::Triphasic,
        BuiltinTemplate::PositiveLed,
    ];

    // (amplitude, center ms, width ms) Gaussian lobes
    fn lobes(self) -> &'static [(f64, f64, f64)] {
        match self {
            BuiltinTemplate::Biphasic => &[(-1.0, 0.30, 0.07), (0.45, 0.55, 0.12)],
            BuiltinTemplate::BiphasicWide => &[(-1.0, 0.32, 0.10), (0.35, 0.65, 0.12)],
            BuiltinTemplate::Triphasic => &[(0.30, 0.15, 0.05), (-1.0, 0.33, 0.07), (0.40, 0.58, 0.11)],
            BuiltinTemplate::PositiveLed => &[(1.0, 0.30, 0.08), (-0.5, 0.56, 0.12)],
        }
    }
}

/// Parameters for a synthetic recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSpec {
    pub templates: Vec<Template>,
    pub firing_rate_hz: f64,
    /// Gaussian noise standard deviation relative to the unit template peak.
    pub noise_sigma: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub rng_seed: u64,
    pub min_separation_s: f64,
    pub channels: usize,
    /// Replaces the Poisson train on every channel when set.
    pub forced_onsets_s: Option<Vec<f64>>,
}

impl SynthesisSpec {
    /// Single-channel spec with the built-in templates, 20 Hz firing and
    /// 2 ms minimum separation.
    pub fn new(noise_sigma: f64, duration_s: f64, sample_rate_hz: f64, rng_seed: u64) -> Self {
        SynthesisSpec {
            templates: Template::builtin_set(sample_rate_hz),
            firing_rate_hz: 20.0,
            noise_sigma,
            duration_s,
            sample_rate_hz,
            rng_seed,
            min_separation_s: 2e-3,
            channels: 1,
            forced_onsets_s: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.templates.is_empty() || self.templates.iter().any(|t| t.samples.is_empty()) {
            return Err(Error::EmptyTemplate);
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::InvalidDuration(self.duration_s));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidSampleRate(self.sample_rate_hz));
        }
        if !(self.noise_sigma >= 0.0) || !(self.firing_rate_hz >= 0.0) {
            return Err(Error::InvalidParams("noise_sigma and firing_rate_hz must be non-negative"));
        }
        if !(self.min_separation_s >= 0.0) {
            return Err(Error::InvalidParams("min_separation_s must be non-negative"));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        libm::round(self.duration_s * self.sample_rate_hz) as usize
    }
}

/// One synthesized channel: samples plus spike onset times in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthChannel {
    pub samples: Vec<f64>,
    pub onsets_s: Vec<f64>,
}

/// Synthesizes channel `channel` of `spec`. Channels draw from independent
/// streams of the same seed, so any channel can be regenerated alone.
pub fn synthesize_channel(spec: &SynthesisSpec, channel: usize) -> Result<SynthChannel> {
    spec.validate()?;
    let fs = spec.sample_rate_hz;
    let n = spec.n_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    rng.set_stream(channel as u64);

    let waveforms: Vec<Vec<f64>> = spec.templates.iter().map(|t| t.resampled(fs)).collect();
    let max_len = waveforms.iter().map(Vec::len).max().unwrap_or(0);

    let candidates = match &spec.forced_onsets_s {
        Some(forced) => forced.clone(),
        None => poisson_times(&mut rng, spec.firing_rate_hz, spec.duration_s),
    };

    let mut samples = vec![0.0; n];
    let mut onsets_s = Vec::new();
    let mut last: Option<f64> = None;
    for t in candidates {
        let k = libm::ceil(t * fs - 1e-9).max(0.0) as usize;
        let onset = k as f64 / fs;
        if k + max_len > n {
            continue;
        }
        if let Some(prev) = last {
            if onset - prev < spec.min_separation_s {
                continue;
            }
        }
        let which = if waveforms.len() == 1 { 0 } else { rng.random_range(0..waveforms.len()) };
        for (dst, src) in samples[k..].iter_mut().zip(&waveforms[which]) {
            *dst += src;
        }
        onsets_s.push(onset);
        last = Some(onset);
    }

    if spec.noise_sigma > 0.0 {
        for x in samples.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += spec.noise_sigma * z;
        }
    }
    Ok(SynthChannel { samples, onsets_s })
}

fn poisson_times<R: Rng>(rng: &mut R, rate_hz: f64, duration_s: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if rate_hz <= 0.0 {
        return out;
    }
    let exp = Exp::new(rate_hz).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t >= duration_s {
            return out;
        }
        out.push(t);
    }
}

/// Synthesizes every channel of `spec` with ground truth.
pub fn synthesize(spec: &SynthesisSpec) -> Result<Recording> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.channels);
    let mut truth = Vec::with_capacity(spec.channels);
    for ch in 0..spec.channels {
        let c = synthesize_channel(spec, ch)?;
        samples.push(c.samples);
        truth.push(c.onsets_s);
    }
    Recording::new(spec.sample_rate_hz, samples, Some(truth))
}

/// Transposed direct-form II biquad, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn butterworth(kind: Kind, f0: f64, fs: f64) -> Self {
        let w0 = 2.0 * core::f64::consts::PI * f0 / fs;
        let (sin, cos) = (libm::sin(w0), libm::cos(w0));
        let alpha = sin / core::f64::consts::SQRT_2;
        let a0 = 1.0 + alpha;
        let b = match kind {
            Kind::LowPass => [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0],
            Kind::HighPass => [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0],
        };
        Biquad { b: [b[0] / a0, b[1] / a0, b[2] / a0], a: [-2.0 * cos / a0, (1.0 - alpha) / a0] }
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    // State giving the steady-state response to a constant input `x0`.
    fn steady_state(&self, x0: f64) -> [f64; 2] {
        let g = self.dc_gain();
        [(g - self.b[0]) * x0, (self.b[2] - self.a[1] * g) * x0]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

#[derive(Clone, Copy)]
enum Kind {
    LowPass,
    HighPass,
}

/// Zero-phase band-pass: a 2nd-order Butterworth high-pass and low-pass
/// cascade run forward and backward with odd-reflection padding.
#[derive(Debug, Clone, PartialEq)]
pub struct BandpassFilter {
    sections: [Biquad; 2],
    pad: usize,
}

impl BandpassFilter {
    pub fn new(low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidSampleRate(sample_rate_hz));
        }
        let nyquist_hz = sample_rate_hz / 2.0;
        if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist_hz) {
            return Err(Error::InvalidBand { low_hz, high_hz, nyquist_hz });
        }
        Ok(BandpassFilter {
            sections: [
                Biquad::butterworth(Kind::HighPass, low_hz, sample_rate_hz),
                Biquad::butterworth(Kind::LowPass, high_hz, sample_rate_hz),
            ],
            // a few high-pass time constants
            pad: libm::ceil(3.0 * sample_rate_hz / low_hz) as usize,
        })
    }

    fn run_cascade(&self, x: &mut [f64]) {
        let mut x0 = x[0];
        for s in &self.sections {
            let z = s.steady_state(x0);
            s.run(x, z);
            x0 *= s.dc_gain();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = self.pad.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        self.run_cascade(&mut ext);
        ext.reverse();
        self.run_cascade(&mut ext);
        ext.reverse();
        ext.drain(..pad);
        ext.truncate(n);
        ext
    }
}

/// Band-passes every channel, keeping ground truth.
pub fn bandpass(rec: &Recording, low_hz: f64, high_hz: f64) -> Result<Recording> {
    let filter = BandpassFilter::new(low_hz, high_hz, rec.sample_rate_hz)?;
    Ok(Recording {
        sample_rate_hz: rec.sample_rate_hz,
        samples: rec.samples.iter().map(|c| filter.apply(c)).collect(),
        ground_truth: rec.ground_truth.clone(),
    })
}

/// Half-open sample range `[onset, onset + 1 ms)` clipped to `len`.
pub(crate) fn spike_window(onset_s: f64, fs: f64, len: usize) -> core::ops::Range<usize> {
    let start = (libm::round(onset_s * fs) as usize).min(len);
    let end = (start + libm::round(SPIKE_WINDOW_S * fs) as usize).min(len);
    start..end
}

/// Mean spike peak over noise RMS, in dB. Peaks are `max |x|` inside each
/// ground-truth 1 ms window; the noise RMS uses samples further than 1 ms
/// before or 2 ms after any onset. Returns `+inf` for noiseless data.
pub fn snr_of(rec: &Recording) -> Result<f64> {
    let truth = rec.ground_truth.as_ref().ok_or(Error::NoGroundTruth)?;
    let fs = rec.sample_rate_hz;
    let n = rec.len();
    let guard_before = libm::round(1e-3 * fs) as usize;
    let guard_after = libm::round(2e-3 * fs) as usize;

    let (mut peak_sum, mut peaks) = (0.0, 0usize);
    let (mut noise_sq, mut noise_n) = (0.0, 0usize);
    for (x, onsets) in rec.samples.iter().zip(truth) {
        let mut quiet = vec![true; n];
        for &t in onsets {
            let w = spike_window(t, fs, n);
            if let Some(p) = x[w.clone()].iter().map(|v| libm::fabs(*v)).reduce(f64::max) {
                peak_sum += p;
                peaks += 1;
            }
            let lo = w.start.saturating_sub(guard_before);
            let hi = (w.start + guard_after).min(n);
            quiet[lo..hi].iter_mut().for_each(|q| *q = false);
        }
        for (v, q) in x.iter().zip(&quiet) {
            if *q {
                noise_sq += v * v;
                noise_n += 1;
            }
        }
    }
    if peaks == 0 {
        return Err(Error::NoGroundTruth);
    }
    let peak = peak_sum / peaks as f64;
    let rms = if noise_n == 0 { 0.0 } else { libm::sqrt(noise_sq / noise_n as f64) };
    if rms == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * libm::log10(peak / rms))
}

/// Noise level (relative to unit peak) giving the requested SNR in dB.
pub fn noise_sigma_for_snr(snr_db: f64) -> f64 {
    libm::pow(10.0, -snr_db / 20.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn tone(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| libm::sin(2.0 * PI * freq * i as f64 / fs)).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        libm::sqrt(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
    }

    #[test]
    fn noiseless_forced_spike_is_the_template() {
        let fs = 24_000.0;
        let tpl = Template::builtin(BuiltinTemplate::Biphasic, fs);
        let mut spec = SynthesisSpec::new(0.0, 0.05, fs, 1);
        spec.templates = alloc::vec![tpl.clone()];
        spec.forced_onsets_s = Some(alloc::vec![0.01]);
        let rec = synthesize(&spec).unwrap();
        let k = 240;
        let x = &rec.samples[0];
        assert_eq!(rec.ground_truth.as_ref().unwrap()[0], alloc::vec![0.01]);
        assert!(x[..k].iter().all(|v| *v == 0.0));
        assert_eq!(&x[k..k + tpl.samples.len()], &tpl.samples[..]);
        assert!(x[k + tpl.samples.len()..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn builtin_templates_are_distinct_and_normalized() {
        let set = Template::builtin_set(24_000.0);
        assert!(set.len() >= 4);
        for (i, a) in set.iter().enumerate() {
            assert_eq!(a.samples.len(), 24);
            let peak = a.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!((peak - 1.0).abs() < 1e-12);
            for b in &set[i + 1..] {
                assert_ne!(a.samples, b.samples);
            }
        }
    }

    #[test]
    fn synthesis_errors() {
        let mut spec = SynthesisSpec::new(0.1, 1.0, 24_000.0, 0);
        spec.templates.clear();
        assert_eq!(synthesize(&spec), Err(Error::EmptyTemplate));
        let spec = SynthesisSpec::new(0.1, 0.0, 24_000.0, 0);
        assert!(matches!(synthesize(&spec), Err(Error::InvalidDuration(_))));
        let mut spec = SynthesisSpec::new(0.1, 1.0, 24_000.0, 0);
        spec.sample_rate_hz = -1.0;
        assert!(matches!(synthesize(&spec), Err(Error::InvalidSampleRate(_))));
        assert_eq!(Template::new(alloc::vec![0.0; 4], 24_000.0), Err(Error::EmptyTemplate));
    }

    #[test]
    fn poisson_count_at_twenty_hz() {
        // 6 s at 20 Hz: mean 120, thinning by 2 ms removes ~4%.
        let mut spec = SynthesisSpec::new(0.1, 6.0, 24_000.0, 0);
        spec.channels = 8;
        let rec = synthesize(&spec).unwrap();
        let sd = libm::sqrt(120.0);
        for onsets in rec.ground_truth.unwrap() {
            let n = onsets.len() as f64;
            assert!((n - 120.0).abs() < 4.0 * sd, "count {n}");
        }
    }

    #[test]
    fn ground_truth_sorted_and_separated() {
        let mut spec = SynthesisSpec::new(0.05, 10.0, 24_000.0, 3);
        spec.firing_rate_hz = 200.0;
        let c = synthesize_channel(&spec, 0).unwrap();
        for w in c.onsets_s.windows(2) {
            assert!(w[1] - w[0] >= spec.min_separation_s - 1e-12);
        }
        assert!(c.onsets_s.iter().all(|&t| (0.0..10.0).contains(&t)));
    }

    #[test]
    fn synthesis_is_deterministic_and_channels_independent() {
        let mut spec = SynthesisSpec::new(0.1, 0.5, 24_000.0, 42);
        spec.channels = 3;
        let a = synthesize(&spec).unwrap();
        let b = synthesize(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(synthesize_channel(&spec, 2).unwrap().samples, a.samples[2]);
        assert_ne!(a.samples[0], a.samples[1]);
    }

    #[test]
    fn noise_tiers() {
        for (i, sigma) in [0.05, 0.10, 0.15, 0.20].into_iter().enumerate() {
            let mut spec = SynthesisSpec::new(sigma, 2.0, 24_000.0, i as u64);
            spec.firing_rate_hz = 0.0;
            let c = synthesize_channel(&spec, 0).unwrap();
            assert!((rms(&c.samples) - sigma).abs() < 0.02 * sigma);
        }
    }

    #[test]
    fn bandpass_rejects_dc() {
        let f = BandpassFilter::new(300.0, 3000.0, 24_000.0).unwrap();
        let c = 2.5;
        let out = f.apply(&alloc::vec![c; 5000]);
        assert_eq!(out.len(), 5000);
        assert!(out.iter().all(|v| v.abs() < 1e-6 * c));
    }

    #[test]
    fn bandpass_mid_band_gain() {
        let fs = 24_000.0;
        let f = BandpassFilter::new(300.0, 3000.0, fs).unwrap();
        let mid = libm::sqrt(300.0 * 3000.0);
        let x = tone(mid, fs, 24_000);
        let y = f.apply(&x);
        let margin = 2400;
        let gain = rms(&y[margin..x.len() - margin]) / rms(&x[margin..x.len() - margin]);
        assert!((gain - 1.0).abs() < 0.05, "gain {gain}");
    }

    #[test]
    fn bandpass_stop_band_attenuation() {
        let fs = 24_000.0;
        let f = BandpassFilter::new(300.0, 3000.0, fs).unwrap();
        let x = tone(30.0, fs, 48_000);
        let y = f.apply(&x);
        let margin = 4800;
        let gain = rms(&y[margin..x.len() - margin]) / rms(&x[margin..x.len() - margin]);
        assert!(20.0 * libm::log10(gain) <= -20.0, "gain {gain}");
    }

    #[test]
    fn bandpass_twice_is_close_to_once_in_band() {
        let mut spec = SynthesisSpec::new(1.0, 2.0, 24_000.0, 9);
        spec.firing_rate_hz = 0.0;
        let noise = synthesize_channel(&spec, 0).unwrap().samples;
        let f = BandpassFilter::new(300.0, 3000.0, 24_000.0).unwrap();
        let once = f.apply(&noise);
        let twice = f.apply(&once);
        // compare in a narrow band around the center; a second-order pair
        // still attenuates the center by 1 - |H|^2 ~ 2% per extra pass
        let inner = BandpassFilter::new(850.0, 1050.0, 24_000.0).unwrap();
        let narrow = |x: &[f64]| inner.apply(&inner.apply(&inner.apply(x)));
        let (a, b) = (narrow(&once), narrow(&twice));
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        assert!(rms(&diff) < 0.03 * rms(&a), "{}", rms(&diff) / rms(&a));
    }

    #[test]
    fn bandpass_band_errors() {
        assert!(matches!(BandpassFilter::new(0.0, 3000.0, 24_000.0), Err(Error::InvalidBand { .. })));
        assert!(matches!(BandpassFilter::new(3000.0, 300.0, 24_000.0), Err(Error::InvalidBand { .. })));
        assert!(matches!(BandpassFilter::new(300.0, 12_000.0, 24_000.0), Err(Error::InvalidBand { .. })));
    }

    #[test]
    fn snr_definition() {
        // Spike-free noise, spikes with exact unit peak placed by hand.
        let fs = 24_000.0;
        let mut spec = SynthesisSpec::new(0.1, 4.0, fs, 5);
        spec.firing_rate_hz = 0.0;
        let mut x = synthesize_channel(&spec, 0).unwrap().samples;
        let mut onsets = Vec::new();
        for k in 0..40 {
            let i = 2400 + k * 2000;
            x[i..i + 24].iter_mut().for_each(|v| *v = 0.0);
            x[i + 5] = 1.0;
            onsets.push(i as f64 / fs);
        }
        let rec = Recording::new(fs, alloc::vec![x], Some(alloc::vec![onsets])).unwrap();
        let snr = snr_of(&rec).unwrap();
        assert!((snr - 20.0).abs() < 0.3, "snr {snr}");
    }

    #[test]
    fn snr_noiseless_is_infinite() {
        let spec = SynthesisSpec::new(0.0, 1.0, 24_000.0, 5);
        assert_eq!(snr_of(&synthesize(&spec).unwrap()), Ok(f64::INFINITY));
    }

    #[test]
    fn snr_round_trip_40_db() {
        let mut spec = SynthesisSpec::new(noise_sigma_for_snr(40.0), 6.0, 24_000.0, 11);
        spec.channels = 4;
        let snr = snr_of(&synthesize(&spec).unwrap()).unwrap();
        assert!((snr - 40.0).abs() < 1.0, "snr {snr}");
    }

    #[test]
    fn snr_requires_truth() {
        let rec = Recording::new(1000.0, alloc::vec![alloc::vec![0.0; 10]], None).unwrap();
        assert_eq!(snr_of(&rec), Err(Error::NoGroundTruth));
    }
}
