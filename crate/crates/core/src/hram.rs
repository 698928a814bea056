//! Behavioral model of the hybrid eDRAM/SRAM in-memory detector macro.
//!
//! Each channel owns eight bitcells used as a circular buffer. Every
//! detection period the bitcell under the pointer is reset, accumulates one
//! voltage jump per incoming event (polarity ignored), latches
//! `v_cap > trip_point` into its SRAM, and the ripple counter reads the
//! popcount of all eight latches. A digital threshold with refractory on the
//! counter gives the detections.
//!
//! Voltages are normalized so that one nominal event jump is 1.0. With
//! mismatch, flips, leakage and event dropping disabled the macro reduces
//! exactly to [`crate::evspd::detect`].

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoder::{delta_modulate, AerEvent, BANK_SIZE, MAX_CHANNELS};
use crate::evspd::{EvSpdParams, Trigger};
use crate::{Error, Micros, Result};

/// Bitcells per channel.
pub const CELLS: usize = 8;
pub const BANKS: usize = MAX_CHANNELS / BANK_SIZE;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bitcell {
    pub v_cap: f64,
    pub jump_gain: f64,
    pub trip_point: f64,
    pub stored_bit: bool,
}

impl Bitcell {
    fn nominal(trip_point: f64) -> Self {
        Bitcell { v_cap: 0.0, jump_gain: 1.0, trip_point, stored_bit: false }
    }
}

/// Two-bit bias code selecting one of four jump multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VbpCode(u8);

impl VbpCode {
    pub const NOMINAL: VbpCode = VbpCode(1);
    /// Preference order among equally good codes.
    pub const TIE_ORDER: [VbpCode; 4] = [VbpCode(1), VbpCode(2), VbpCode(0), VbpCode(3)];

    pub fn new(code: u8) -> Result<Self> {
        if code > 3 {
            return Err(Error::InvalidParams("bias code must be 0..=3"));
        }
        Ok(VbpCode(code))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl Default for VbpCode {
    fn default() -> Self {
        VbpCode::NOMINAL
    }
}

/// Jump multipliers per bias code; code 0 fires most easily.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbpTable {
    pub multipliers: [f64; 4],
}

impl Default for VbpTable {
    fn default() -> Self {
        VbpTable { multipliers: [1.25, 1.0, 0.85, 0.7] }
    }
}

impl VbpTable {
    pub fn validate(&self) -> Result<()> {
        let m = self.multipliers;
        if m.iter().any(|v| !(*v > 0.0)) || m.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParams("bias multipliers must be positive and strictly decreasing"));
        }
        Ok(())
    }

    pub fn multiplier(&self, code: VbpCode) -> f64 {
        self.multipliers[code.0 as usize]
    }
}

/// Non-idealities of the macro.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MismatchSpec {
    /// Spread of the jump gain shared by a channel's bitcells (its bias
    /// branch); this is what the bias calibration compensates.
    pub jump_cv: f64,
    /// Additional per-bitcell spread of the jump gain.
    pub cell_jump_cv: f64,
    /// Per-bitcell spread of the latch trip point.
    pub trip_cv: f64,
    /// Probability that a latch that should store 1 stores 0.
    pub flip_prob_pos: f64,
    /// Probability that a latch that should store 0 stores 1.
    pub flip_prob_neg: f64,
    /// Fraction of each period, at its start, during which events are lost.
    pub drop_fraction: f64,
    /// eDRAM leakage time constant; `None` disables leakage.
    pub leakage_tau_us: Option<f64>,
    pub rng_seed: u64,
}

impl Default for MismatchSpec {
    fn default() -> Self {
        MismatchSpec {
            jump_cv: 0.1,
            cell_jump_cv: 0.05,
            trip_cv: 0.05,
            flip_prob_pos: 0.017,
            flip_prob_neg: 0.03,
            drop_fraction: 0.0064,
            leakage_tau_us: None,
            rng_seed: 0,
        }
    }
}

impl MismatchSpec {
    /// Everything disabled.
    pub fn ideal() -> Self {
        MismatchSpec {
            jump_cv: 0.0,
            cell_jump_cv: 0.0,
            trip_cv: 0.0,
            flip_prob_pos: 0.0,
            flip_prob_neg: 0.0,
            drop_fraction: 0.0,
            leakage_tau_us: None,
            rng_seed: 0,
        }
    }

    /// Only latch flips, at the given rates.
    pub fn flips_only(flip_prob_pos: f64, flip_prob_neg: f64, rng_seed: u64) -> Self {
        MismatchSpec { flip_prob_pos, flip_prob_neg, rng_seed, ..Self::ideal() }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.flip_prob_pos, self.flip_prob_neg, self.drop_fraction];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParams("probabilities must lie in [0, 1]"));
        }
        if [self.jump_cv, self.cell_jump_cv, self.trip_cv].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParams("coefficients of variation must be non-negative"));
        }
        if self.leakage_tau_us.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::InvalidParams("leakage time constant must be positive"));
        }
        Ok(())
    }

    fn flips_enabled(&self) -> bool {
        self.flip_prob_pos > 0.0 || self.flip_prob_neg > 0.0
    }
}

/// Detection settings of the macro.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroParams {
    pub t_s_us: Micros,
    /// Nominal latch trip point in event units.
    pub trip_point: f64,
    pub thr2: usize,
    pub refractory_us: Micros,
}

impl MacroParams {
    /// Equivalent hardware settings for a detector configuration. The trip
    /// point sits halfway between the integer counts on either side of
    /// `thr1`, which decides identically for integer counts and leaves
    /// margin for gain mismatch.
    pub fn from_detection(p: &EvSpdParams) -> Result<Self> {
        p.validate()?;
        if p.n_s != CELLS {
            return Err(Error::InvalidParams("the macro has exactly 8 bitcells per channel"));
        }
        Ok(MacroParams {
            t_s_us: p.t_s_us,
            trip_point: libm::floor(p.thr1) + 0.5,
            thr2: p.thr2,
            refractory_us: p.refractory_us,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_s_us == 0 {
            return Err(Error::InvalidParams("t_s_us must be positive"));
        }
        if !(self.trip_point > 0.0) {
            return Err(Error::InvalidParams("trip_point must be positive"));
        }
        if self.thr2 < 1 || self.thr2 > CELLS {
            return Err(Error::InvalidParams("thr2 must be in 1..=8"));
        }
        Ok(())
    }
}

/// Per-period settings used by [`ChannelHram::step_cycle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleConfig {
    pub t_s_us: Micros,
    pub drop_fraction: f64,
    pub leakage_tau_us: Option<f64>,
    pub flip_prob_pos: f64,
    pub flip_prob_neg: f64,
}

impl CycleConfig {
    pub fn new(t_s_us: Micros, m: &MismatchSpec) -> Self {
        CycleConfig {
            t_s_us,
            drop_fraction: m.drop_fraction,
            leakage_tau_us: m.leakage_tau_us,
            flip_prob_pos: m.flip_prob_pos,
            flip_prob_neg: m.flip_prob_neg,
        }
    }
}

/// State of one channel column.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelHram {
    pub bitcells: [Bitcell; CELLS],
    /// Bitcell written in the next period.
    pub pointer: usize,
    pub vbp_code: VbpCode,
    pub counter: u8,
}

impl ChannelHram {
    pub fn ideal(trip_point: f64) -> Self {
        ChannelHram {
            bitcells: [Bitcell::nominal(trip_point); CELLS],
            pointer: 0,
            vbp_code: VbpCode::NOMINAL,
            counter: 0,
        }
    }

    /// Draws this channel's mismatch from `spec`; the draw depends only on
    /// the seed and the channel index.
    pub fn with_mismatch(spec: &MismatchSpec, channel: usize, trip_point: f64) -> Self {
        let mut hram = Self::ideal(trip_point);
        if spec.jump_cv == 0.0 && spec.cell_jump_cv == 0.0 && spec.trip_cv == 0.0 {
            return hram;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        rng.set_stream(2 * channel as u64);
        let mut draw = |cv: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            (1.0 + cv * z).max(0.05)
        };
        let channel_gain = draw(spec.jump_cv);
        for cell in hram.bitcells.iter_mut() {
            cell.jump_gain = channel_gain * draw(spec.cell_jump_cv);
            cell.trip_point = trip_point * draw(spec.trip_cv);
        }
        hram
    }

    /// Clears stored state, keeping the drawn mismatch and bias code.
    pub fn reset_state(&mut self) {
        for c in self.bitcells.iter_mut() {
            c.v_cap = 0.0;
            c.stored_bit = false;
        }
        self.pointer = 0;
        self.counter = 0;
    }

    /// Mean jump gain across the bitcells.
    pub fn mean_gain(&self) -> f64 {
        self.bitcells.iter().map(|c| c.jump_gain).sum::<f64>() / CELLS as f64
    }

    /// Stored bits, most recently written first.
    pub fn bits_newest_first(&self) -> [bool; CELLS] {
        core::array::from_fn(|j| self.bitcells[(self.pointer + CELLS - 1 - j) % CELLS].stored_bit)
    }

    /// One detection period starting at `period_start_us`: reset,
    /// accumulate, threshold and read out. Returns the counter value.
    pub fn step_cycle<R: Rng + ?Sized>(
        &mut self,
        period_start_us: Micros,
        events: &[Micros],
        cfg: &CycleConfig,
        vbp: &VbpTable,
        rng: &mut R,
    ) -> Result<u8> {
        let end = period_start_us + cfg.t_s_us;
        if let Some(&t) = events.iter().find(|&&t| t < period_start_us || t >= end) {
            return Err(Error::EventOutsidePeriod { t_us: t, start_us: period_start_us, end_us: end });
        }
        let multiplier = vbp.multiplier(self.vbp_code);
        let accumulate_from = period_start_us as f64 + cfg.drop_fraction * cfg.t_s_us as f64;
        let cell = &mut self.bitcells[self.pointer];

        cell.v_cap = 0.0;
        for &t in events {
            if (t as f64) < accumulate_from {
                continue;
            }
            let mut jump = cell.jump_gain * multiplier;
            if let Some(tau) = cfg.leakage_tau_us {
                jump *= libm::exp(-((end - t) as f64) / tau);
            }
            cell.v_cap += jump;
        }

        let ideal = cell.v_cap > cell.trip_point;
        cell.stored_bit = if ideal {
            !(cfg.flip_prob_pos > 0.0 && rng.random::<f64>() < cfg.flip_prob_pos)
        } else {
            cfg.flip_prob_neg > 0.0 && rng.random::<f64>() < cfg.flip_prob_neg
        };

        self.counter = self.bitcells.iter().filter(|c| c.stored_bit).count() as u8;
        self.pointer = (self.pointer + 1) % CELLS;
        Ok(self.counter)
    }
}

/// Detections and optional counter traces of a macro run.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroOutput {
    pub detections: Vec<Vec<Micros>>,
    /// Counter value at the end of every period, per channel.
    pub counters: Option<Vec<Vec<u8>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRun {
    pub detections: Vec<Micros>,
    pub counters: Option<Vec<u8>>,
}

/// The full macro: per-channel columns grouped in banks of 128.
#[derive(Debug, Clone, PartialEq)]
pub struct HramMacro {
    channels: Vec<ChannelHram>,
    params: MacroParams,
    mismatch: MismatchSpec,
    vbp: VbpTable,
}

impl HramMacro {
    pub fn new(channels: usize, params: MacroParams, mismatch: MismatchSpec, vbp: VbpTable) -> Result<Self> {
        if channels == 0 {
            return Err(Error::EmptyChannelSet);
        }
        if channels > MAX_CHANNELS {
            return Err(Error::TooManyChannels(channels));
        }
        params.validate()?;
        mismatch.validate()?;
        vbp.validate()?;
        let channels = (0..channels).map(|c| ChannelHram::with_mismatch(&mismatch, c, params.trip_point)).collect();
        Ok(HramMacro { channels, params, mismatch, vbp })
    }

    pub fn channels(&self) -> &[ChannelHram] {
        &self.channels
    }

    pub fn params(&self) -> &MacroParams {
        &self.params
    }

    pub fn codes(&self) -> Vec<VbpCode> {
        self.channels.iter().map(|c| c.vbp_code).collect()
    }

    /// Direct access to one column, e.g. to inject a known defect.
    pub fn channel_mut(&mut self, channel: usize) -> Option<&mut ChannelHram> {
        self.channels.get_mut(channel)
    }

    pub fn set_code(&mut self, channel: usize, code: VbpCode) -> Result<()> {
        let ch = self.channels.get_mut(channel).ok_or(Error::AddressOutOfRange(channel as u32))?;
        ch.vbp_code = code;
        Ok(())
    }

    pub fn set_codes(&mut self, codes: &[VbpCode]) -> Result<()> {
        if codes.len() != self.channels.len() {
            return Err(Error::ShapeMismatch);
        }
        for (c, &code) in self.channels.iter_mut().zip(codes) {
            c.vbp_code = code;
        }
        Ok(())
    }

    /// Splits a merged stream by address: bank from the top three bits,
    /// column from the low seven.
    pub fn route(&self, events: &[AerEvent]) -> Result<Vec<Vec<Micros>>> {
        let mut banks: Vec<Vec<Vec<Micros>>> = vec![vec![Vec::new(); BANK_SIZE]; BANKS];
        for e in events {
            if e.address.index() >= self.channels.len() {
                return Err(Error::AddressOutOfRange(e.address.raw() as u32));
            }
            banks[e.address.bank()][e.address.channel_in_bank()].push(e.t_us);
        }
        let mut lanes: Vec<Vec<Micros>> = banks.into_iter().flatten().collect();
        lanes.truncate(self.channels.len());
        Ok(lanes)
    }

    /// Random stream for channel `channel`, trial `trial`.
    pub fn flip_rng(&self, channel: usize, trial: u64) -> ChaCha8Rng {
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.mismatch.rng_seed.wrapping_add(trial.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        rng.set_stream(2 * channel as u64 + 1);
        rng
    }

    /// Number of periods covering `events`, including the trailing periods
    /// in which the moving window drains.
    pub fn periods_for(&self, last_event_us: Option<Micros>) -> u64 {
        last_event_us.map_or(0, |t| t / self.params.t_s_us + CELLS as u64)
    }

    /// Runs one channel from a cleared state over `periods` periods.
    pub fn run_channel<R: Rng + ?Sized>(
        &self,
        channel: usize,
        events: &[Micros],
        periods: u64,
        record_counters: bool,
        rng: &mut R,
    ) -> Result<ChannelRun> {
        let mut hram = self.channels.get(channel).ok_or(Error::AddressOutOfRange(channel as u32))?.clone();
        hram.reset_state();
        let cfg = CycleConfig::new(self.params.t_s_us, &self.mismatch);
        let t_s = self.params.t_s_us;
        let flips = self.mismatch.flips_enabled();
        let mut trigger = Trigger::new(self.params.refractory_us);
        let mut detections = Vec::new();
        let mut counters = record_counters.then(|| Vec::with_capacity(periods as usize));

        let mut next = 0usize;
        let mut period = 0u64;
        while period < periods {
            let start = period * t_s;
            let end = start + t_s;
            let first = next;
            while next < events.len() && events[next] < end {
                next += 1;
            }
            if first == next && !flips && hram.counter == 0 && counters.is_none() {
                // idle column: jump to the next event's period
                let target = events.get(next).map_or(periods, |&t| t / t_s).min(periods);
                if target > period {
                    let skipped = (target - period) as usize;
                    hram.pointer = (hram.pointer + skipped) % CELLS;
                    period = target;
                    continue;
                }
            }
            let c = hram.step_cycle(start, &events[first..next], &cfg, &self.vbp, rng)?;
            if let Some(trace) = counters.as_mut() {
                trace.push(c);
            }
            if trigger.update(c as usize > self.params.thr2, end) {
                detections.push(end);
            }
            period += 1;
        }
        Ok(ChannelRun { detections, counters })
    }

    /// Runs every channel on a merged stream. `span_us` fixes the simulated
    /// duration; by default it ends once the last event has drained.
    pub fn run(&self, events: &[AerEvent], span_us: Option<Micros>, record_counters: bool) -> Result<MacroOutput> {
        let lanes = self.route(events)?;
        let periods = match span_us {
            Some(s) => s.div_ceil(self.params.t_s_us),
            None => self.periods_for(events.iter().map(|e| e.t_us).max()),
        };
        let mut detections = Vec::with_capacity(lanes.len());
        let mut counters = record_counters.then(Vec::new);
        for (ch, lane) in lanes.iter().enumerate() {
            let mut rng = self.flip_rng(ch, 0);
            let run = self.run_channel(ch, lane, periods, record_counters, &mut rng)?;
            detections.push(run.detections);
            if let (Some(all), Some(c)) = (counters.as_mut(), run.counters) {
                all.push(c);
            }
        }
        Ok(MacroOutput { detections, counters })
    }

    /// Evaluates all four bias codes on the calibration stimuli and picks
    /// the one minimizing missed spikes plus noise detections.
    pub fn calibrate_channel(
        &self,
        channel: usize,
        stimuli: &Stimuli,
        cfg: &CalibrationConfig,
    ) -> Result<CalibrationOutcome> {
        if channel >= self.channels.len() {
            return Err(Error::AddressOutOfRange(channel as u32));
        }
        if stimuli.spike.is_empty() {
            return Err(Error::MissingStimuli);
        }
        let spike_train = stimuli.train(&stimuli.spike, cfg);
        let noise_train = stimuli.train(&stimuli.noise, cfg);
        let periods = (cfg.period_us * cfg.presentations as u64).div_ceil(self.params.t_s_us);

        let mut probe = self.clone();
        let mut outcome = CalibrationOutcome { code: VbpCode::NOMINAL, fn_counts: [0; 4], fp_counts: [0; 4] };
        for code in 0..4u8 {
            probe.channels[channel].vbp_code = VbpCode(code);
            let trial = 1 + 2 * code as u64;
            let spikes =
                probe.run_channel(channel, &spike_train, periods, false, &mut self.flip_rng(channel, trial))?;
            let noise =
                probe.run_channel(channel, &noise_train, periods, false, &mut self.flip_rng(channel, trial + 1))?;
            let mut hit = vec![false; cfg.presentations];
            for &t in &spikes.detections {
                // a detection at the closing edge of the last bin still belongs to it
                let k = (t.saturating_sub(1) / cfg.period_us) as usize;
                if let Some(h) = hit.get_mut(k) {
                    *h = true;
                }
            }
            outcome.fn_counts[code as usize] = hit.iter().filter(|h| !**h).count() as u32;
            outcome.fp_counts[code as usize] = noise.detections.len() as u32;
        }
        outcome.code = VbpCode::TIE_ORDER.into_iter().min_by_key(|c| outcome.cost(*c)).expect("four codes");
        Ok(outcome)
    }

    /// Calibrates every channel and applies the selected codes.
    pub fn calibrate(&mut self, stimuli: &Stimuli, cfg: &CalibrationConfig) -> Result<Vec<CalibrationOutcome>> {
        let outcomes =
            (0..self.channels.len()).map(|ch| self.calibrate_channel(ch, stimuli, cfg)).collect::<Result<Vec<_>>>()?;
        let codes: Vec<VbpCode> = outcomes.iter().map(|o| o.code).collect();
        self.set_codes(&codes)?;
        Ok(outcomes)
    }
}

/// Event times of the two calibration stimuli, each within one period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stimuli {
    pub spike: Vec<Micros>,
    pub noise: Vec<Micros>,
}

impl Stimuli {
    fn train(&self, events: &[Micros], cfg: &CalibrationConfig) -> Vec<Micros> {
        (0..cfg.presentations as u64)
            .flat_map(|k| events.iter().filter(|&&t| t < cfg.period_us).map(move |t| t + k * cfg.period_us))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalibrationConfig {
    pub period_us: Micros,
    pub presentations: usize,
}

impl Default for CalibrationConfig {
    /// Every 10 ms over one second.
    fn default() -> Self {
        CalibrationConfig { period_us: 10_000, presentations: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalibrationOutcome {
    pub code: VbpCode,
    pub fn_counts: [u32; 4],
    pub fp_counts: [u32; 4],
}

impl CalibrationOutcome {
    /// Missed spike presentations plus noise detections under `code`.
    pub fn cost(&self, code: VbpCode) -> u32 {
        self.fn_counts[code.0 as usize] + self.fp_counts[code.0 as usize]
    }
}

/// Delta-modulates a spike waveform and a noise segment into the two
/// calibration stimuli. Inputs longer than 10 ms are truncated.
pub fn build_stimuli(
    spike_waveform: &[f64],
    noise_segment: &[f64],
    threshold: f64,
    sample_rate_hz: f64,
) -> Result<Stimuli> {
    if spike_waveform.is_empty() || noise_segment.is_empty() {
        return Err(Error::MissingStimuli);
    }
    let max = libm::round(CalibrationConfig::default().period_us as f64 * 1e-6 * sample_rate_hz) as usize;
    let modulate = |x: &[f64]| -> Result<Vec<Micros>> {
        Ok(delta_modulate(&x[..x.len().min(max)], threshold, sample_rate_hz)?.into_iter().map(|p| p.t_us).collect())
    };
    Ok(Stimuli { spike: modulate(spike_waveform)?, noise: modulate(noise_segment)? })
}
