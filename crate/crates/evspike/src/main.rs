use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use evspike::config::{parse_mode, DetectorConfig, MismatchConfig, PipelineConfig};
use evspike::experiment::{self, tier_seed};
use evspike::io::{self, SampleEncoding};
use evspike_core::baselines::{abs_threshold_detect, edlpf_detect, neo_detect};
use evspike_core::dataset::{bandpass, synthesize, Recording, SynthesisSpec, Template};
use evspike_core::encoder::{encode_recording, pick_threshold, split_channels};
use evspike_core::eval::{match_spikes, mean_defined, metrics};
use evspike_core::evspd::{detect_channels, SweepAccumulator};
use evspike_core::hram::{HramMacro, Stimuli, VbpCode};
use evspike_core::{secs_to_us, Micros};

/// Event-based neural spike detection: synthetic data, delta-modulation
/// encoding, the dual-threshold event detector, the in-memory macro model and
/// sample-domain baselines.
///
/// Every global flag can also be set through an `EVSPIKE_` environment
/// variable, e.g. `EVSPIKE_SEED=3` or `EVSPIKE_THREADS=1`.
#[derive(Parser)]
#[command(name = "evspike", version)]
struct Cli {
    /// JSON pipeline config; missing keys take their defaults.
    #[arg(long, global = true, env = "EVSPIKE_CONFIG")]
    config: Option<PathBuf>,
    /// Root seed, overrides the config.
    #[arg(long, global = true, env = "EVSPIKE_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "EVSPIKE_THREADS")]
    threads: Option<usize>,
    /// Output path: a directory or file depending on the subcommand.
    #[arg(long, global = true, env = "EVSPIKE_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize one recording directory per noise level.
    Generate(GenerateArgs),
    /// Delta-modulate a recording into an AER event file.
    Encode(EncodeArgs),
    /// Run the event-based detector on an event file.
    Detect(DetectArgs),
    /// Run the in-memory macro model on an event file.
    MacroRun(MacroRunArgs),
    /// Pick a bias code per channel from spike and noise stimuli.
    Calibrate(CalibrateArgs),
    /// Sample-domain reference detectors.
    Baseline(BaselineArgs),
    /// Score detections against ground truth.
    Evaluate(EvaluateArgs),
    /// Mean accuracy over the (thr1, thr2) grid for one recording.
    Sweep(SweepArgs),
    /// Run the full benchmark suite and print the acceptance table.
    Reproduce,
}

#[derive(Args)]
struct GenerateArgs {
    /// Comma-separated noise levels; defaults to the config tiers.
    #[arg(long, value_delimiter = ',')]
    noise: Option<Vec<f64>>,
    /// Seconds per recording.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long, default_value = "f32le")]
    encoding: SampleEncoding,
}

#[derive(Args)]
struct EncodeArgs {
    /// Recording directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// `frac-peak:F`, `frac-p2p:F` or `fixed:V`; defaults to the config.
    #[arg(long)]
    mode: Option<String>,
    /// Skip the band-pass filter.
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct DetectArgs {
    /// AER event file (`.csv` selects the text mirror).
    #[arg(long)]
    events: PathBuf,
    /// JSON detector parameters; defaults to the config.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Channel count; defaults to the highest address seen plus one.
    #[arg(long)]
    channels: Option<usize>,
}

#[derive(Args)]
struct MacroRunArgs {
    #[arg(long)]
    events: PathBuf,
    /// JSON mismatch spec; defaults to the config.
    #[arg(long)]
    mismatch: Option<PathBuf>,
    /// `auto` (needs --stimuli), a code 0..=3 for every channel, or a vbp.csv.
    #[arg(long, default_value = "1")]
    vbp: String,
    /// `spike.aer,noise.aer` for `--vbp auto`.
    #[arg(long)]
    stimuli: Option<String>,
    #[arg(long)]
    channels: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// `spike.aer,noise.aer`, one stimulus period per channel address.
    #[arg(long)]
    stimuli: String,
    #[arg(long)]
    channels: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Neo,
    Edlpf,
    Abs,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    method: Method,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Ground truth CSV `channel,time_s`.
    #[arg(long)]
    truth: PathBuf,
    /// Detections CSV `channel,t_us`.
    #[arg(long)]
    spikes: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    raw: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.threads {
        ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::Generate(a) => generate(&mut cfg, a, need_out(out)?),
        Command::Encode(a) => encode(&cfg, a, need_out(out)?),
        Command::Detect(a) => detect(&cfg, a, need_out(out)?),
        Command::MacroRun(a) => macro_run(&cfg, a, need_out(out)?),
        Command::Calibrate(a) => calibrate(&cfg, a, need_out(out)?),
        Command::Baseline(a) => baseline(&cfg, a, need_out(out)?),
        Command::Evaluate(a) => evaluate(&cfg, a, out),
        Command::Sweep(a) => sweep(&cfg, a, out),
        Command::Reproduce => {
            let summary = experiment::reproduce(&cfg, need_out(out)?)?;
            print!("{}", summary.table());
            Ok(())
        }
    }
}

fn need_out(out: Option<&Path>) -> Result<&Path> {
    out.context("--out is required for this subcommand")
}

fn generate(cfg: &mut PipelineConfig, a: GenerateArgs, out: &Path) -> Result<()> {
    if let Some(n) = a.noise {
        cfg.dataset.noise_sigmas = n;
    }
    if let Some(d) = a.duration {
        cfg.dataset.duration_s = d;
    }
    if let Some(c) = a.channels {
        cfg.dataset.channels = c;
    }
    cfg.validate()?;
    let d = &cfg.dataset;
    for &sigma in &d.noise_sigmas {
        let spec = SynthesisSpec {
            templates: Template::builtin_set(d.sample_rate_hz),
            firing_rate_hz: d.firing_rate_hz,
            noise_sigma: sigma,
            duration_s: d.duration_s,
            sample_rate_hz: d.sample_rate_hz,
            rng_seed: tier_seed(cfg.seed, sigma),
            min_separation_s: d.min_separation_s,
            channels: d.channels,
            forced_onsets_s: None,
        };
        let rec = synthesize(&spec)?;
        let dir = out.join(format!("sigma{sigma}"));
        io::write_recording_dir(&dir, &rec, a.encoding, 1.0)?;
        log::info!("wrote {}", dir.display());
    }
    Ok(())
}

/// Loads a recording and applies the configured band-pass unless `raw`.
fn load_filtered(cfg: &PipelineConfig, dir: &Path, raw: bool) -> Result<Recording> {
    let rec = io::read_recording_dir(dir)?;
    match cfg.dataset.bandpass_hz {
        Some([lo, hi]) if !raw => Ok(bandpass(&rec, lo, hi)?),
        _ => Ok(rec),
    }
}

fn encode(cfg: &PipelineConfig, a: EncodeArgs, out: &Path) -> Result<()> {
    let rec = load_filtered(cfg, &a.input, a.raw)?;
    let mode = match &a.mode {
        Some(m) => parse_mode(m)?,
        None => cfg.encoder.mode()?,
    };
    let pick = pick_threshold(&rec, mode, cfg.encoder.fallback_threshold)?;
    let fell_back = pick.fell_back.iter().filter(|f| **f).count();
    if fell_back > 0 {
        log::warn!("{fell_back} channels used the fallback threshold");
    }
    let events = encode_recording(&rec, &pick.thresholds)?;
    if out.extension().is_some_and(|e| e == "csv") {
        io::write_aer_csv(out, &events)?;
    } else {
        io::write_aer(out, &events)?;
    }
    log::info!("{} events from {} channels", events.len(), rec.channels());
    Ok(())
}

fn channel_count(events: &[evspike_core::encoder::AerEvent], given: Option<usize>) -> usize {
    given.unwrap_or_else(|| events.iter().map(|e| e.address.index() + 1).max().unwrap_or(0))
}

fn detect(cfg: &PipelineConfig, a: DetectArgs, out: &Path) -> Result<()> {
    let params = match &a.params {
        Some(p) => io::read_json::<DetectorConfig>(p)?.params(),
        None => cfg.detector.params(),
    };
    params.validate()?;
    let events = io::read_events(&a.events)?;
    let spikes = detect_channels(&events, channel_count(&events, a.channels), &params)?;
    io::write_spikes(out, &spikes)
}

/// Per-channel stimuli from a `spike.aer,noise.aer` pair.
fn read_stimuli(spec: &str, channels: Option<usize>) -> Result<Vec<Stimuli>> {
    let (sp, np) = io::path_pair(spec)?;
    let spike = io::read_events(&sp)?;
    let noise = io::read_events(&np)?;
    let n = channels.unwrap_or_else(|| channel_count(&spike, None).max(channel_count(&noise, None)));
    ensure!(n > 0, "stimulus files contain no events");
    let lanes = |ev| -> Result<Vec<Vec<Micros>>> {
        Ok(split_channels(ev, n)?.into_iter().map(|c| c.into_iter().map(|p| p.t_us).collect()).collect())
    };
    Ok(lanes(&spike)?.into_iter().zip(lanes(&noise)?).map(|(spike, noise)| Stimuli { spike, noise }).collect())
}

fn calibrated(
    cfg: &PipelineConfig,
    mac: &HramMacro,
    stimuli: &[Stimuli],
) -> Result<Vec<evspike_core::hram::CalibrationOutcome>> {
    ensure!(
        stimuli.len() == mac.channels().len(),
        "stimuli cover {} channels, macro has {}",
        stimuli.len(),
        mac.channels().len()
    );
    let cal = cfg.hardware.calibration();
    stimuli
        .par_iter()
        .enumerate()
        .map(|(ch, s)| mac.calibrate_channel(ch, s, &cal).with_context(|| format!("calibrating channel {ch}")))
        .collect()
}

fn calibrate(cfg: &PipelineConfig, a: CalibrateArgs, out: &Path) -> Result<()> {
    let stimuli = read_stimuli(&a.stimuli, a.channels)?;
    let mac = HramMacro::new(
        stimuli.len(),
        cfg.hardware.macro_params(&cfg.detector)?,
        cfg.hardware.mismatch.spec(),
        cfg.hardware.vbp_table(),
    )?;
    let outcomes = calibrated(cfg, &mac, &stimuli)?;
    io::write_vbp(out, &outcomes)
}

fn macro_run(cfg: &PipelineConfig, a: MacroRunArgs, out: &Path) -> Result<()> {
    let (counters_path, spikes_path) =
        io::path_pair(&out.to_string_lossy()).context("macro-run --out takes counters.csv,spikes.csv")?;
    let mismatch = match &a.mismatch {
        Some(p) => io::read_json::<MismatchConfig>(p)?.spec(),
        None => cfg.hardware.mismatch.spec(),
    };
    let events = io::read_events(&a.events)?;
    let n = channel_count(&events, a.channels);
    ensure!(n > 0, "event file is empty; pass --channels");
    let mut mac = HramMacro::new(n, cfg.hardware.macro_params(&cfg.detector)?, mismatch, cfg.hardware.vbp_table())?;
    match a.vbp.as_str() {
        "auto" => {
            let spec = a.stimuli.as_deref().context("--vbp auto needs --stimuli spike.aer,noise.aer")?;
            let stimuli = read_stimuli(spec, Some(n))?;
            let codes: Vec<VbpCode> = calibrated(cfg, &mac, &stimuli)?.into_iter().map(|o| o.code).collect();
            mac.set_codes(&codes)?;
        }
        v => match v.parse::<u8>() {
            Ok(code) => mac.set_codes(&vec![VbpCode::new(code)?; n])?,
            Err(_) => {
                let codes = io::read_vbp(Path::new(v))?;
                ensure!(codes.len() == n, "{v} has {} channels, events have {n}", codes.len());
                mac.set_codes(&codes)?;
            }
        },
    }
    let lanes = mac.route(&events)?;
    let periods = mac.periods_for(events.iter().map(|e| e.t_us).max());
    let runs = lanes
        .par_iter()
        .enumerate()
        .map(|(ch, lane)| Ok(mac.run_channel(ch, lane, periods, true, &mut mac.flip_rng(ch, 0))?))
        .collect::<Result<Vec<_>>>()?;
    let (spikes, counters): (Vec<_>, Vec<_>) =
        runs.into_iter().map(|r| (r.detections, r.counters.unwrap_or_default())).unzip();
    io::write_counters(&counters_path, &counters)?;
    io::write_spikes(&spikes_path, &spikes)
}

fn baseline(cfg: &PipelineConfig, a: BaselineArgs, out: &Path) -> Result<()> {
    let rec = load_filtered(cfg, &a.input, a.raw)?;
    let fs = rec.sample_rate_hz;
    let p = cfg.baseline.params(fs);
    let spikes = rec
        .samples
        .par_iter()
        .map(|x| {
            Ok(match a.method {
                Method::Neo => neo_detect(x, fs, &p)?,
                Method::Edlpf => edlpf_detect(x, fs, &p)?,
                Method::Abs => abs_threshold_detect(x, fs, p.abs_mult, p.refractory_us),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    io::write_spikes(out, &spikes)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.6}"))
}

fn truth_us(truth: &[Vec<f64>]) -> Vec<Vec<Micros>> {
    truth.iter().map(|c| c.iter().map(|&t| secs_to_us(t)).collect()).collect()
}

fn evaluate(cfg: &PipelineConfig, a: EvaluateArgs, out: Option<&Path>) -> Result<()> {
    let spikes = io::read_spikes(&a.spikes, 0)?;
    let truth = io::read_truth(&a.truth, spikes.len())?;
    let n = truth.len().max(spikes.len());
    let truth = truth_us(&truth);
    let empty = Vec::new();
    let mut text = String::from("channel,tp,fp,fn,sensitivity,fdr,accuracy\n");
    let mut acc = Vec::with_capacity(n);
    for ch in 0..n {
        let m = match_spikes(truth.get(ch).unwrap_or(&empty), spikes.get(ch).unwrap_or(&empty), cfg.eval.tolerance_us);
        let s = metrics(&m);
        acc.push(s.accuracy);
        text += &format!(
            "{ch},{},{},{},{},{},{}\n",
            m.tp,
            m.fp,
            m.fn_,
            fmt_opt(s.sensitivity),
            fmt_opt(s.fdr),
            fmt_opt(s.accuracy)
        );
    }
    write_or_print(out, &text)?;
    log::info!("mean accuracy {}", fmt_opt(mean_defined(&acc)));
    Ok(())
}

fn sweep(cfg: &PipelineConfig, a: SweepArgs, out: Option<&Path>) -> Result<()> {
    let rec = load_filtered(cfg, &a.input, a.raw)?;
    let truth = truth_us(rec.ground_truth.as_ref().context("sweep needs ground truth (truth.csv)")?);
    let pick = pick_threshold(&rec, cfg.encoder.mode()?, cfg.encoder.fallback_threshold)?;
    let events = encode_recording(&rec, &pick.thresholds)?;
    let lanes = split_channels(&events, rec.channels())?;
    let (t1, t2) = (&cfg.eval.sweep_thr1, &cfg.eval.sweep_thr2);
    let params = cfg.detector.params();
    let mut acc = SweepAccumulator::new(t1.len(), t2.len());
    for (lane, truth) in lanes.iter().zip(&truth) {
        acc.add_channel(lane, truth, t1, t2, &params, cfg.eval.tolerance_us)?;
    }
    let mut text = String::from("thr1,thr2,mean_accuracy\n");
    for (a, b, v) in acc.into_grid(t1, t2).cells() {
        text += &format!("{a},{b},{}\n", fmt_opt(v));
    }
    write_or_print(out, &text)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
