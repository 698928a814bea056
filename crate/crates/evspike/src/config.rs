//! Pipeline configuration. Every field has a default; unknown keys are
//! rejected so typos fail loudly.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use evspike_core::baselines::BaselineParams;
use evspike_core::encoder::ThresholdMode;
use evspike_core::evspd::EvSpdParams;
use evspike_core::hram::{CalibrationConfig, MacroParams, MismatchSpec, VbpTable};
use evspike_core::Micros;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub encoder: EncoderConfig,
    pub detector: DetectorConfig,
    pub baseline: BaselineConfig,
    pub hardware: HardwareConfig,
    pub eval: EvalConfig,
    pub experiments: ExperimentConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            dataset: DatasetConfig::default(),
            encoder: EncoderConfig::default(),
            detector: DetectorConfig::default(),
            baseline: BaselineConfig::default(),
            hardware: HardwareConfig::default(),
            eval: EvalConfig::default(),
            experiments: ExperimentConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.noise_sigmas.is_empty() {
            bail!("dataset.noise_sigmas must not be empty");
        }
        if d.channels == 0 {
            bail!("dataset.channels must be positive");
        }
        if !(d.duration_s > 0.0) || !(d.sample_rate_hz > 0.0) {
            bail!("dataset.duration_s and dataset.sample_rate_hz must be positive");
        }
        self.encoder.mode()?;
        self.detector.params().validate()?;
        self.baseline.params(d.sample_rate_hz).validate()?;
        self.hardware.mismatch.spec().validate()?;
        self.hardware.vbp_table().validate()?;
        if self.eval.sweep_thr1.is_empty() || self.eval.sweep_thr2.is_empty() {
            bail!("eval sweep ranges must not be empty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// One synthetic tier per noise level, relative to unit spike peak.
    pub noise_sigmas: Vec<f64>,
    pub channels: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub firing_rate_hz: f64,
    pub min_separation_s: f64,
    /// `[low, high]` band-pass corners applied before encoding; `null`
    /// feeds raw samples to the modulator.
    pub bandpass_hz: Option<[f64; 2]>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            noise_sigmas: vec![0.05, 0.10, 0.15, 0.20],
            channels: 64,
            duration_s: 60.0,
            sample_rate_hz: 24_000.0,
            firing_rate_hz: 20.0,
            min_separation_s: 2e-3,
            bandpass_hz: Some([evspike_core::dataset::DEFAULT_LOW_HZ, evspike_core::dataset::DEFAULT_HIGH_HZ]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// `frac-peak:F`, `frac-p2p:F` or `fixed:V`.
    pub mode: String,
    /// Used on channels where a data-driven mode finds no spikes.
    pub fallback_threshold: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { mode: "frac-peak:0.1".into(), fallback_threshold: 0.1 }
    }
}

impl EncoderConfig {
    pub fn mode(&self) -> Result<ThresholdMode> {
        parse_mode(&self.mode)
    }
}

pub fn parse_mode(s: &str) -> Result<ThresholdMode> {
    let (kind, value) = s.split_once(':').with_context(|| format!("threshold mode {s:?} needs the form kind:value"))?;
    let v: f64 = value.parse().with_context(|| format!("bad number in threshold mode {s:?}"))?;
    if !(v > 0.0) {
        bail!("threshold mode value must be positive: {s:?}");
    }
    Ok(match kind {
        "frac-peak" => ThresholdMode::FractionOfPeak(v),
        "frac-p2p" => ThresholdMode::FractionOfP2p(v),
        "fixed" => ThresholdMode::Fixed(v),
        _ => bail!("unknown threshold mode {kind:?} (expected frac-peak, frac-p2p or fixed)"),
    })
}

/// Detector constants, also the format of `detect --params`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Bin duration in microseconds.
    pub t_s_us: Micros,
    /// Bins in the moving window.
    pub n_s: usize,
    /// Events per bin that must be exceeded for the bin to count.
    pub thr1: f64,
    /// Active bins in the window that must be exceeded to report a spike.
    pub thr2: usize,
    pub refractory_us: Micros,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let p = EvSpdParams::default();
        DetectorConfig { t_s_us: p.t_s_us, n_s: p.n_s, thr1: p.thr1, thr2: p.thr2, refractory_us: p.refractory_us }
    }
}

impl DetectorConfig {
    pub fn params(&self) -> EvSpdParams {
        EvSpdParams {
            t_s_us: self.t_s_us,
            n_s: self.n_s,
            thr1: self.thr1,
            thr2: self.thr2,
            refractory_us: self.refractory_us,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// NEO / ED-LPF smoothing window.
    pub smoothing_ms: f64,
    /// NEO threshold as a multiple of the mean smoothed energy.
    pub neo_thresh_mult: f64,
    pub abs_mult: f64,
    pub refractory_us: Micros,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let p = BaselineParams::for_sample_rate(24_000.0);
        BaselineConfig {
            smoothing_ms: 1.0,
            neo_thresh_mult: p.neo_thresh_mult,
            abs_mult: p.abs_mult,
            refractory_us: p.refractory_us,
        }
    }
}

impl BaselineConfig {
    pub fn params(&self, sample_rate_hz: f64) -> BaselineParams {
        BaselineParams {
            neo_window: ((self.smoothing_ms * 1e-3 * sample_rate_hz).round() as usize).max(1),
            neo_thresh_mult: self.neo_thresh_mult,
            abs_mult: self.abs_mult,
            refractory_us: self.refractory_us,
        }
    }
}

/// Macro non-idealities, also the format of `macro-run --mismatch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MismatchConfig {
    pub jump_cv: f64,
    pub cell_jump_cv: f64,
    pub trip_cv: f64,
    pub flip_prob_pos: f64,
    pub flip_prob_neg: f64,
    pub drop_fraction: f64,
    pub leakage_tau_us: Option<f64>,
    pub rng_seed: u64,
}

impl Default for MismatchConfig {
    fn default() -> Self {
        MismatchConfig::from(MismatchSpec::default())
    }
}

impl From<MismatchSpec> for MismatchConfig {
    fn from(m: MismatchSpec) -> Self {
        MismatchConfig {
            jump_cv: m.jump_cv,
            cell_jump_cv: m.cell_jump_cv,
            trip_cv: m.trip_cv,
            flip_prob_pos: m.flip_prob_pos,
            flip_prob_neg: m.flip_prob_neg,
            drop_fraction: m.drop_fraction,
            leakage_tau_us: m.leakage_tau_us,
            rng_seed: m.rng_seed,
        }
    }
}

impl MismatchConfig {
    pub fn spec(&self) -> MismatchSpec {
        MismatchSpec {
            jump_cv: self.jump_cv,
            cell_jump_cv: self.cell_jump_cv,
            trip_cv: self.trip_cv,
            flip_prob_pos: self.flip_prob_pos,
            flip_prob_neg: self.flip_prob_neg,
            drop_fraction: self.drop_fraction,
            leakage_tau_us: self.leakage_tau_us,
            rng_seed: self.rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardwareConfig {
    pub mismatch: MismatchConfig,
    /// Jump multiplier per bias code 0..=3.
    pub vbp_multipliers: [f64; 4],
    pub calibration_period_us: Micros,
    pub calibration_presentations: usize,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        let c = CalibrationConfig::default();
        HardwareConfig {
            mismatch: MismatchConfig::default(),
            vbp_multipliers: VbpTable::default().multipliers,
            calibration_period_us: c.period_us,
            calibration_presentations: c.presentations,
        }
    }
}

impl HardwareConfig {
    pub fn vbp_table(&self) -> VbpTable {
        VbpTable { multipliers: self.vbp_multipliers }
    }

    pub fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig { period_us: self.calibration_period_us, presentations: self.calibration_presentations }
    }

    pub fn macro_params(&self, detector: &DetectorConfig) -> Result<MacroParams> {
        Ok(MacroParams::from_detection(&detector.params())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub tolerance_us: Micros,
    pub pattern_bin_us: Micros,
    pub sweep_thr1: Vec<f64>,
    pub sweep_thr2: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tolerance_us: evspike_core::eval::DEFAULT_TOLERANCE_US,
            pattern_bin_us: evspike_core::eval::DEFAULT_PATTERN_BIN_US,
            sweep_thr1: (1..=6).map(f64::from).collect(),
            sweep_thr2: (1..=7).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Relative change applied to `t_s_us` and to the delta threshold.
    pub sensitivity_step: f64,
    /// Tiers and seed count for the latch-flip study.
    pub flip_sigmas: Vec<f64>,
    pub flip_seeds: usize,
    /// Calibration study: macro channels mapped onto the recordings of one tier.
    pub calibration_sigma: f64,
    pub calibration_channels: usize,
    pub calibration_accuracy_floor: f64,
    /// SNR sweep in dB, with its own channel count and duration.
    pub snr_db: Vec<f64>,
    pub snr_channels: usize,
    pub snr_duration_s: f64,
    /// Randomized short streams for the macro equivalence check.
    pub random_streams: usize,
    /// Random instances per property suite; 0 skips the suites.
    pub property_cases: usize,
    /// Re-run a reduced copy of the suite at two thread counts and compare.
    pub determinism_check: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sensitivity_step: 0.2,
            flip_sigmas: vec![0.15, 0.20],
            flip_seeds: 10,
            calibration_sigma: 0.20,
            calibration_channels: 256,
            calibration_accuracy_floor: 0.8,
            snr_db: (0..10).map(|k| 4.0 + 8.0 * k as f64).collect(),
            snr_channels: 8,
            snr_duration_s: 10.0,
            random_streams: 1000,
            property_cases: 10_000,
            determinism_check: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"seed": 3, "dataset": {"channels": 2}}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.dataset.channels, 2);
        assert_eq!(cfg.dataset.duration_s, 60.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 3}"#).is_err());
        assert!(serde_json::from_str::<DetectorConfig>(r#"{"thr3": 1}"#).is_err());
    }

    #[test]
    fn modes() {
        assert_eq!(parse_mode("frac-peak:0.1").unwrap(), ThresholdMode::FractionOfPeak(0.1));
        assert_eq!(parse_mode("frac-p2p:0.5").unwrap(), ThresholdMode::FractionOfP2p(0.5));
        assert_eq!(parse_mode("fixed:0.07").unwrap(), ThresholdMode::Fixed(0.07));
        assert!(parse_mode("peak:0.1").is_err());
        assert!(parse_mode("fixed:-1").is_err());
        assert!(parse_mode("fixed").is_err());
    }
}
