//! On-disk formats: raw sample files with a JSON sidecar, ground truth and
//! spike CSVs, the binary AER event file and the calibration tables.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use evspike_core::dataset::Recording;
use evspike_core::encoder::{Address, AerEvent, Polarity};
use evspike_core::hram::{CalibrationOutcome, VbpCode};
use evspike_core::Micros;

pub const AER_MAGIC: &[u8; 4] = b"AER1";
const AER_RECORD: usize = 8;

pub const SAMPLES_FILE: &str = "samples.raw";
pub const META_FILE: &str = "meta.json";
pub const TRUTH_FILE: &str = "truth.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleEncoding {
    #[serde(rename = "i16le")]
    I16Le,
    #[serde(rename = "f32le")]
    F32Le,
}

impl SampleEncoding {
    pub fn bytes(self) -> usize {
        match self {
            SampleEncoding::I16Le => 2,
            SampleEncoding::F32Le => 4,
        }
    }
}

impl std::str::FromStr for SampleEncoding {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i16le" => Ok(SampleEncoding::I16Le),
            "f32le" => Ok(SampleEncoding::F32Le),
            other => bail!("unknown sample encoding {other:?} (expected i16le or f32le)"),
        }
    }
}

/// Sidecar describing a headerless interleaved sample file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMeta {
    pub sample_rate_hz: f64,
    pub channels: usize,
    pub encoding: SampleEncoding,
    /// Multiplier from stored value to signal units.
    #[serde(default = "unit_gain")]
    pub gain: f64,
}

fn unit_gain() -> f64 {
    1.0
}

/// Decodes interleaved samples into channel-major rows.
pub fn decode_interleaved(bytes: &[u8], channels: usize, encoding: SampleEncoding, gain: f64) -> Result<Vec<Vec<f64>>> {
    ensure!(channels > 0, "channel count must be positive");
    let frame = channels * encoding.bytes();
    ensure!(
        bytes.len().is_multiple_of(frame),
        "truncated sample file: {} bytes is not a multiple of {} channels x {} bytes",
        bytes.len(),
        channels,
        encoding.bytes()
    );
    let n = bytes.len() / frame;
    let mut out = vec![Vec::with_capacity(n); channels];
    let width = encoding.bytes();
    for (k, chunk) in bytes.chunks_exact(width).enumerate() {
        let v = match encoding {
            SampleEncoding::I16Le => i16::from_le_bytes([chunk[0], chunk[1]]) as f64,
            SampleEncoding::F32Le => f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64,
        };
        out[k % channels].push(v * gain);
    }
    Ok(out)
}

/// Reads a raw interleaved file. Ground truth is left empty.
pub fn load_raw(
    path: &Path,
    sample_rate_hz: f64,
    channels: usize,
    encoding: SampleEncoding,
    gain: f64,
) -> Result<Recording> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let samples = decode_interleaved(&bytes, channels, encoding, gain)?;
    Ok(Recording::new(sample_rate_hz, samples, None)?)
}

/// Writes samples interleaved; `gain` divides before quantization.
pub fn save_raw(path: &Path, rec: &Recording, encoding: SampleEncoding, gain: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for i in 0..rec.len() {
        for ch in &rec.samples {
            let v = ch[i] / gain;
            match encoding {
                SampleEncoding::I16Le => {
                    let q = v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                    w.write_all(&q.to_le_bytes())?;
                }
                SampleEncoding::F32Le => w.write_all(&(v as f32).to_le_bytes())?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a recording directory: samples, sidecar and, if present, truth.
pub fn write_recording_dir(dir: &Path, rec: &Recording, encoding: SampleEncoding, gain: f64) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save_raw(&dir.join(SAMPLES_FILE), rec, encoding, gain)?;
    let meta = RawMeta { sample_rate_hz: rec.sample_rate_hz, channels: rec.channels(), encoding, gain };
    write_json(&dir.join(META_FILE), &meta)?;
    if let Some(truth) = &rec.ground_truth {
        write_truth(&dir.join(TRUTH_FILE), truth)?;
    }
    Ok(())
}

/// Reads a recording directory written by [`write_recording_dir`], or any
/// directory holding a raw file and its sidecar.
pub fn read_recording_dir(dir: &Path) -> Result<Recording> {
    let meta: RawMeta = read_json(&dir.join(META_FILE))?;
    let mut rec = load_raw(&dir.join(SAMPLES_FILE), meta.sample_rate_hz, meta.channels, meta.encoding, meta.gain)?;
    let truth_path = dir.join(TRUTH_FILE);
    if truth_path.exists() {
        let truth = read_truth(&truth_path, meta.channels)?;
        rec = Recording::new(rec.sample_rate_hz, rec.samples, Some(truth))?;
    }
    Ok(rec)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))
}

/// `channel,time_s`, sorted by channel then time.
pub fn write_truth(path: &Path, truth: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["channel", "time_s"])?;
    for (ch, times) in truth.iter().enumerate() {
        for t in times {
            w.write_record([ch.to_string(), format!("{t:.9}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path, channels: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); channels];
    for row in csv_reader(path)?.deserialize() {
        let (ch, t): (usize, f64) = row.with_context(|| format!("parsing {}", path.display()))?;
        ensure!(ch < channels, "{}: channel {ch} out of range", path.display());
        out[ch].push(t);
    }
    for v in &mut out {
        v.sort_by(f64::total_cmp);
    }
    Ok(out)
}

/// `channel,t_us`.
pub fn write_spikes(path: &Path, spikes: &[Vec<Micros>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["channel", "t_us"])?;
    for (ch, times) in spikes.iter().enumerate() {
        for t in times {
            w.write_record([ch.to_string(), t.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a spike list; at least `channels` rows are returned.
pub fn read_spikes(path: &Path, channels: usize) -> Result<Vec<Vec<Micros>>> {
    let mut out: Vec<Vec<Micros>> = vec![Vec::new(); channels];
    for row in csv_reader(path)?.deserialize() {
        let (ch, t): (usize, Micros) = row.with_context(|| format!("parsing {}", path.display()))?;
        if ch >= out.len() {
            out.resize(ch + 1, Vec::new());
        }
        out[ch].push(t);
    }
    for v in &mut out {
        v.sort_unstable();
    }
    Ok(out)
}

pub fn encode_aer(events: &[AerEvent]) -> Result<Vec<u8>> {
    let count = u32::try_from(events.len()).context("too many events for one file")?;
    let mut buf = Vec::with_capacity(8 + events.len() * AER_RECORD);
    buf.extend_from_slice(AER_MAGIC);
    buf.extend_from_slice(&count.to_le_bytes());
    for e in events {
        let t = u32::try_from(e.t_us).with_context(|| format!("timestamp {} does not fit in 32 bits", e.t_us))?;
        buf.extend_from_slice(&t.to_le_bytes());
        buf.extend_from_slice(&e.address.raw().to_le_bytes());
        buf.push(e.polarity.as_i8() as u8);
        buf.push(0);
    }
    Ok(buf)
}

pub fn decode_aer(bytes: &[u8]) -> Result<Vec<AerEvent>> {
    ensure!(bytes.len() >= 8 && &bytes[..4] == AER_MAGIC, "not an AER1 event file");
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    ensure!(body.len() == count * AER_RECORD, "event file declares {count} records but holds {} bytes", body.len());
    let mut out = Vec::with_capacity(count);
    let mut last = 0;
    for r in body.chunks_exact(AER_RECORD) {
        let t_us = u32::from_le_bytes([r[0], r[1], r[2], r[3]]) as Micros;
        let address = Address::new(u16::from_le_bytes([r[4], r[5]]) as u32)?;
        let polarity = Polarity::from_i8(r[6] as i8).with_context(|| format!("bad polarity byte {}", r[6] as i8))?;
        ensure!(r[7] == 0, "reserved byte must be zero");
        ensure!(t_us >= last, "events are not sorted by time");
        last = t_us;
        out.push(AerEvent { t_us, address, polarity });
    }
    Ok(out)
}

pub fn write_aer(path: &Path, events: &[AerEvent]) -> Result<()> {
    fs::write(path, encode_aer(events)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_aer(path: &Path) -> Result<Vec<AerEvent>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?).read_to_end(&mut bytes)?;
    decode_aer(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// Debug mirror `t_us,address,polarity`.
pub fn write_aer_csv(path: &Path, events: &[AerEvent]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t_us", "address", "polarity"])?;
    for e in events {
        w.write_record([e.t_us.to_string(), e.address.raw().to_string(), e.polarity.as_i8().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aer_csv(path: &Path) -> Result<Vec<AerEvent>> {
    let mut out = Vec::new();
    for row in csv_reader(path)?.deserialize() {
        let (t_us, address, polarity): (Micros, u32, i8) = row?;
        let polarity = Polarity::from_i8(polarity).with_context(|| format!("bad polarity {polarity}"))?;
        out.push(AerEvent { t_us, address: Address::new(address)?, polarity });
    }
    Ok(out)
}

/// Reads binary or CSV events depending on the extension.
pub fn read_events(path: &Path) -> Result<Vec<AerEvent>> {
    if path.extension().is_some_and(|e| e == "csv") {
        read_aer_csv(path)
    } else {
        read_aer(path)
    }
}

/// `channel,code,fn,fp` with the counts at the chosen code.
pub fn write_vbp(path: &Path, outcomes: &[CalibrationOutcome]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["channel", "code", "fn", "fp"])?;
    for (ch, o) in outcomes.iter().enumerate() {
        let k = o.code.get() as usize;
        w.write_record([
            ch.to_string(),
            o.code.get().to_string(),
            o.fn_counts[k].to_string(),
            o.fp_counts[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vbp(path: &Path) -> Result<Vec<VbpCode>> {
    let mut rows: Vec<(usize, u8)> = Vec::new();
    for row in csv_reader(path)?.deserialize() {
        let (ch, code, _fn, _fp): (usize, u8, u32, u32) = row?;
        rows.push((ch, code));
    }
    rows.sort_unstable();
    for (i, (ch, _)) in rows.iter().enumerate() {
        ensure!(*ch == i, "{}: channels must be 0..n without gaps", path.display());
    }
    rows.into_iter().map(|(_, c)| Ok(VbpCode::new(c)?)).collect()
}

/// `channel,period,counter`, only rows with a non-zero counter.
pub fn write_counters(path: &Path, counters: &[Vec<u8>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["channel", "period", "counter"])?;
    for (ch, trace) in counters.iter().enumerate() {
        for (k, c) in trace.iter().enumerate().filter(|(_, c)| **c > 0) {
            w.write_record([ch.to_string(), k.to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Splits `a,b` into two paths.
pub fn path_pair(spec: &str) -> Result<(PathBuf, PathBuf)> {
    match spec.split_once(',') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((PathBuf::from(a), PathBuf::from(b))),
        _ => bail!("expected two comma-separated paths, got {spec:?}"),
    }
}
