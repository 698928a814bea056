//! Delta modulation of sampled signals into address-event streams.

use alloc::vec::Vec;

use crate::baselines::abs_threshold_detect;
use crate::dataset::{spike_window, Recording, SPIKE_WINDOW_S};
use crate::{Error, Micros, Result};

/// Number of addressable channels.
pub const MAX_CHANNELS: usize = 1024;
/// Channels per memory bank.
pub const BANK_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }
}

/// A 10-bit AER address: the top 3 bits select the bank, the low 7 the
/// channel within the bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(u16);

impl Address {
    pub fn new(raw: u32) -> Result<Self> {
        if raw as usize >= MAX_CHANNELS {
            return Err(Error::AddressOutOfRange(raw));
        }
        Ok(Address(raw as u16))
    }

    pub fn raw(self) -> u16 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn bank(self) -> usize {
        (self.0 >> 7) as usize
    }

    pub fn channel_in_bank(self) -> usize {
        (self.0 & 0x7f) as usize
    }
}

/// A single modulator output pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pulse {
    pub t_us: Micros,
    pub polarity: Polarity,
}

/// One frontend event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AerEvent {
    pub t_us: Micros,
    pub address: Address,
    pub polarity: Polarity,
}

/// Anything carrying a microsecond timestamp.
pub trait Timestamped {
    fn t_us(&self) -> Micros;
}

impl Timestamped for Micros {
    fn t_us(&self) -> Micros {
        *self
    }
}

impl Timestamped for Pulse {
    fn t_us(&self) -> Micros {
        self.t_us
    }
}

impl Timestamped for AerEvent {
    fn t_us(&self) -> Micros {
        self.t_us
    }
}

/// Streaming delta modulator.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaModulator {
    v_reset: f64,
    threshold: f64,
    sample_period_us: f64,
    next_sample: u64,
    last_t: Option<Micros>,
}

impl DeltaModulator {
    pub fn new(threshold: f64, sample_rate_hz: f64) -> Result<Self> {
        if !(threshold > 0.0) || !threshold.is_finite() {
            return Err(Error::InvalidThreshold(threshold));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidSampleRate(sample_rate_hz));
        }
        Ok(DeltaModulator {
            v_reset: 0.0,
            threshold,
            sample_period_us: 1e6 / sample_rate_hz,
            next_sample: 0,
            last_t: None,
        })
    }

    /// Last reconstruction level.
    pub fn v_reset(&self) -> f64 {
        self.v_reset
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Consumes one sample and appends its pulses to `out`. Returns the
    /// signed number of pulses emitted.
    pub fn push(&mut self, x: f64, out: &mut Vec<Pulse>) -> i64 {
        let i = self.next_sample;
        self.next_sample += 1;
        let delta = x - self.v_reset;
        let (n, polarity) = if delta > self.threshold {
            (libm::floor(delta / self.threshold), Polarity::On)
        } else if delta < -self.threshold {
            (libm::floor(delta / -self.threshold), Polarity::Off)
        } else {
            return 0;
        };
        let n = n as u64;
        let step = n as f64 * self.threshold;
        match polarity {
            Polarity::On => self.v_reset += step,
            Polarity::Off => self.v_reset -= step,
        }
        // linspace(i, i + 1, n) in sample units
        for k in 0..n {
            let pos = if n == 1 { i as f64 } else { i as f64 + k as f64 / (n - 1) as f64 };
            let mut t = libm::round(pos * self.sample_period_us) as Micros;
            if let Some(last) = self.last_t {
                if t <= last {
                    t = last + 1;
                }
            }
            self.last_t = Some(t);
            out.push(Pulse { t_us: t, polarity });
        }
        match polarity {
            Polarity::On => n as i64,
            Polarity::Off => -(n as i64),
        }
    }
}

/// Delta-modulates `signal`, starting from a zero reconstruction level.
pub fn delta_modulate(signal: &[f64], threshold: f64, sample_rate_hz: f64) -> Result<Vec<Pulse>> {
    let mut dm = DeltaModulator::new(threshold, sample_rate_hz)?;
    let mut out = Vec::new();
    for &x in signal {
        dm.push(x, &mut out);
    }
    Ok(out)
}

/// How to choose the per-channel modulation threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    /// Fraction of the mean spike peak `|x|`.
    FractionOfPeak(f64),
    /// Fraction of the mean peak-to-peak amplitude of 1 ms spike waveforms.
    FractionOfP2p(f64),
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPick {
    pub thresholds: Vec<f64>,
    /// Channels where no spikes were found and the fallback was used.
    pub fell_back: Vec<bool>,
}

/// Picks one threshold per channel. Data-driven modes use ground truth
/// windows when available, otherwise waveforms around absolute-threshold
/// detections.
pub fn pick_threshold(rec: &Recording, mode: ThresholdMode, fallback: f64) -> Result<ThresholdPick> {
    if !(fallback > 0.0) {
        return Err(Error::InvalidThreshold(fallback));
    }
    let fraction = match mode {
        ThresholdMode::Fixed(v) => {
            if !(v > 0.0) {
                return Err(Error::InvalidThreshold(v));
            }
            return Ok(ThresholdPick {
                thresholds: alloc::vec![v; rec.channels()],
                fell_back: alloc::vec![false; rec.channels()],
            });
        }
        ThresholdMode::FractionOfPeak(f) | ThresholdMode::FractionOfP2p(f) => f,
    };
    if !(fraction > 0.0) {
        return Err(Error::InvalidThreshold(fraction));
    }
    let use_p2p = matches!(mode, ThresholdMode::FractionOfP2p(_));
    let fs = rec.sample_rate_hz;
    let n = rec.len();
    let mut pick = ThresholdPick { thresholds: Vec::new(), fell_back: Vec::new() };
    for (ch, x) in rec.samples.iter().enumerate() {
        let windows: Vec<core::ops::Range<usize>> = match &rec.ground_truth {
            Some(truth) => truth[ch].iter().map(|&t| spike_window(t, fs, n)).collect(),
            None => {
                let half = SPIKE_WINDOW_S / 2.0;
                abs_threshold_detect(x, fs, 4.0, 1000)
                    .iter()
                    .map(|&t| spike_window((t as f64 * 1e-6 - half).max(0.0), fs, n))
                    .collect()
            }
        };
        let amps: Vec<f64> = windows
            .into_iter()
            .filter(|w| !w.is_empty())
            .map(|w| {
                let seg = &x[w];
                if use_p2p {
                    let (lo, hi) =
                        seg.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
                    hi - lo
                } else {
                    seg.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)))
                }
            })
            .collect();
        let mean = amps.iter().sum::<f64>() / amps.len().max(1) as f64;
        if amps.is_empty() || !(mean > 0.0) {
            pick.thresholds.push(fallback);
            pick.fell_back.push(true);
        } else {
            pick.thresholds.push(fraction * mean);
            pick.fell_back.push(false);
        }
    }
    Ok(pick)
}

/// Delta-modulates each channel and merges the results into one stream
/// ordered by time, ties broken by ascending address.
pub fn encode_recording(rec: &Recording, thresholds: &[f64]) -> Result<Vec<AerEvent>> {
    if rec.channels() > MAX_CHANNELS {
        return Err(Error::TooManyChannels(rec.channels()));
    }
    if thresholds.len() != rec.channels() {
        return Err(Error::ShapeMismatch);
    }
    let per_channel = rec
        .samples
        .iter()
        .zip(thresholds)
        .map(|(x, &thr)| delta_modulate(x, thr, rec.sample_rate_hz))
        .collect::<Result<Vec<_>>>()?;
    merge_channels(&per_channel)
}

/// Tags per-channel pulse lists with their index as address and merges them.
pub fn merge_channels(per_channel: &[Vec<Pulse>]) -> Result<Vec<AerEvent>> {
    if per_channel.len() > MAX_CHANNELS {
        return Err(Error::TooManyChannels(per_channel.len()));
    }
    let mut events: Vec<AerEvent> = Vec::with_capacity(per_channel.iter().map(Vec::len).sum());
    for (ch, pulses) in per_channel.iter().enumerate() {
        let address = Address(ch as u16);
        events.extend(pulses.iter().map(|p| AerEvent { t_us: p.t_us, address, polarity: p.polarity }));
    }
    // per-channel timestamps are strictly increasing, so (t, address) is a total order
    events.sort_unstable_by_key(|e| (e.t_us, e.address));
    Ok(events)
}

/// Splits a merged stream back into per-channel pulse lists.
pub fn split_channels(events: &[AerEvent], channels: usize) -> Result<Vec<Vec<Pulse>>> {
    let mut out: Vec<Vec<Pulse>> = alloc::vec![Vec::new(); channels];
    for e in events {
        let slot = out.get_mut(e.address.index()).ok_or(Error::AddressOutOfRange(e.address.raw() as u32))?;
        slot.push(Pulse { t_us: e.t_us, polarity: e.polarity });
    }
    Ok(out)
}

/// Piecewise-constant reconstruction from a channel's pulses.
#[derive(Debug, Clone, PartialEq)]
pub struct Staircase {
    /// `(t_us, level)` after each pulse.
    pub steps: Vec<(Micros, f64)>,
}

impl Staircase {
    /// Level at time `t_us` (pulses at `t_us` included).
    pub fn level_at(&self, t_us: Micros) -> f64 {
        match self.steps.partition_point(|&(t, _)| t <= t_us) {
            0 => 0.0,
            k => self.steps[k - 1].1,
        }
    }

    pub fn final_level(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.1)
    }
}

pub fn reconstruct(pulses: &[Pulse], threshold: f64) -> Staircase {
    let mut sum = 0i64;
    Staircase {
        steps: pulses
            .iter()
            .map(|p| {
                sum += p.polarity.as_i8() as i64;
                (p.t_us, threshold * sum as f64)
            })
            .collect(),
    }
}
