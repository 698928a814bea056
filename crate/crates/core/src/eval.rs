//! Spike matching, detection metrics and firing patterns.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Micros, Result};

/// Default matching tolerance, ±1 ms.
pub const DEFAULT_TOLERANCE_US: Micros = 1000;
/// Default firing-pattern bin width.
pub const DEFAULT_PATTERN_BIN_US: Micros = 4000;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(truth, detected)` pairs.
    pub pairs: Vec<(Micros, Micros)>,
}

impl MatchResult {
    pub fn add(&mut self, other: &MatchResult) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Greedy chronological one-to-one matching: each detection takes the
/// earliest unmatched truth spike within `±tolerance_us`. Both inputs must
/// be sorted.
///
/// Because every detection's eligible window has the same width, truth
/// spikes that fall behind one detection's window are behind all later
/// ones too, and the greedy count equals the maximum matching.
pub fn match_spikes(truth: &[Micros], detected: &[Micros], tolerance_us: Micros) -> MatchResult {
    let mut m = MatchResult::default();
    let mut j = 0;
    for &d in detected {
        while j < truth.len() && truth[j] + tolerance_us < d {
            j += 1;
            m.fn_ += 1;
        }
        if j < truth.len() && truth[j] <= d + tolerance_us {
            m.pairs.push((truth[j], d));
            m.tp += 1;
            j += 1;
        } else {
            m.fp += 1;
        }
    }
    m.fn_ += truth.len() - j;
    m
}

/// Sensitivity, false detection rate and accuracy. `None` marks an empty
/// denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub sensitivity: Option<f64>,
    pub fdr: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(m: &MatchResult) -> Metrics {
    Metrics {
        sensitivity: ratio(m.tp, m.tp + m.fn_),
        fdr: ratio(m.fp, m.tp + m.fp),
        accuracy: ratio(m.tp, m.tp + m.fn_ + m.fp),
    }
}

/// Channel × bin matrix of detection counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiringPattern {
    pub bin_width_us: Micros,
    pub counts: Vec<Vec<u32>>,
}

impl FiringPattern {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().map(|&c| c as u64).sum()
    }
}

/// Bins detections over `[0, duration_us)`, trailing partial bin included.
/// Detections at or past `duration_us` are not counted.
pub fn firing_pattern(detections: &[Vec<Micros>], bin_width_us: Micros, duration_us: Micros) -> Result<FiringPattern> {
    if bin_width_us == 0 {
        return Err(Error::InvalidParams("bin width must be positive"));
    }
    let bins = duration_us.div_ceil(bin_width_us) as usize;
    let counts = detections
        .iter()
        .map(|det| {
            let mut row = vec![0u32; bins];
            for &t in det.iter().filter(|&&t| t < duration_us) {
                row[(t / bin_width_us) as usize] += 1;
            }
            row
        })
        .collect();
    Ok(FiringPattern { bin_width_us, counts })
}

/// Sum of absolute cell differences and number of cells. The mean absolute
/// error is `sum / cells`; keeping both lets channels be accumulated
/// separately.
pub fn pattern_abs_diff(a: &FiringPattern, b: &FiringPattern) -> Result<(u64, usize)> {
    if a.counts.len() != b.counts.len() || a.counts.iter().zip(&b.counts).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::ShapeMismatch);
    }
    let mut sum = 0u64;
    let mut cells = 0usize;
    for (x, y) in a.counts.iter().zip(&b.counts) {
        sum += x.iter().zip(y).map(|(p, q)| p.abs_diff(*q) as u64).sum::<u64>();
        cells += x.len();
    }
    Ok((sum, cells))
}

/// Mean absolute error between two firing patterns of equal shape.
pub fn pattern_mae(a: &FiringPattern, b: &FiringPattern) -> Result<f64> {
    let (sum, cells) = pattern_abs_diff(a, b)?;
    if cells == 0 {
        return Ok(0.0);
    }
    Ok(sum as f64 / cells as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub per_channel: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

/// Accuracy of `other` per channel when `reference` is taken as ground truth.
pub fn similarity(reference: &[Vec<Micros>], other: &[Vec<Micros>], tolerance_us: Micros) -> Result<Similarity> {
    if reference.len() != other.len() {
        return Err(Error::ShapeMismatch);
    }
    let per_channel: Vec<Option<f64>> =
        reference.iter().zip(other).map(|(r, o)| metrics(&match_spikes(r, o, tolerance_us)).accuracy).collect();
    Ok(Similarity { mean: mean_defined(&per_channel), per_channel })
}

/// Mean of the defined values.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let (sum, n) = values.iter().flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}
