//! Seeded self-checks run by `reproduce`: each compares a fast routine with
//! a slow reference on random instances and counts disagreements.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use evspike_core::baselines::{abs_threshold, neo};
use evspike_core::encoder::DeltaModulator;
use evspike_core::eval::match_spikes;
use evspike_core::evspd::{moving_sum, MovingSum};
use evspike_core::Micros;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed error where the check is numeric.
    pub worst: Option<f64>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Residual `|x - v_reset| < threshold` after every sample.
pub fn modulator_residual(cases: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst = 0.0f64;
    let mut sink = Vec::new();
    for _ in 0..cases {
        let thr = rng.random_range(0.01..1.0);
        let scale = rng.random_range(0.1..5.0);
        let len = rng.random_range(1..64);
        let mut dm = DeltaModulator::new(thr, 24_000.0).expect("positive threshold");
        let mut ok = true;
        for _ in 0..len {
            let z: f64 = StandardNormal.sample(&mut rng);
            let x = scale * z;
            sink.clear();
            dm.push(x, &mut sink);
            let r = (x - dm.v_reset()).abs() / thr;
            worst = worst.max(r);
            ok &= r < 1.0;
        }
        failures += !ok as usize;
    }
    CheckOutcome { name: "modulator residual bound", cases, failures, worst: Some(worst) }
}

/// Streaming moving sum against the batch definition.
pub fn moving_sum_streaming(cases: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..cases {
        let n_s = rng.random_range(1..=16);
        let len = rng.random_range(0..200);
        let density: f64 = rng.random();
        let a: Vec<u8> = (0..len).map(|_| rng.random_bool(density) as u8).collect();
        let mut m = MovingSum::new(n_s);
        let streamed: Vec<u8> = a.iter().map(|&b| m.push(b)).collect();
        failures += (streamed != moving_sum(&a, n_s)) as usize;
    }
    CheckOutcome { name: "moving sum streaming = batch", cases, failures, worst: None }
}

/// NEO of `a*n + b` is `a^2` away from the ends.
pub fn neo_affine(cases: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..cases {
        let a = rng.random_range(-5.0..5.0);
        let b = rng.random_range(-50.0..50.0);
        let len = rng.random_range(3..64);
        let x: Vec<f64> = (0..len).map(|n| a * n as f64 + b).collect();
        let psi = neo(&x).expect("length >= 3");
        let err = psi[1..len - 1].iter().map(|p| (p - a * a).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        failures += (err >= 1e-9) as usize;
    }
    CheckOutcome { name: "NEO affine identity", cases, failures, worst: Some(worst) }
}

/// Absolute threshold on `n` standard normal samples, expected 4.0.
pub fn abs_threshold_gaussian(n: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let err = (abs_threshold(&x, 4.0) - 4.0).abs();
    CheckOutcome {
        name: "absolute threshold on unit Gaussian",
        cases: 1,
        failures: (err > 0.05) as usize,
        worst: Some(err),
    }
}

/// Maximum bipartite matching size by augmenting paths.
fn max_matching(truth: &[Micros], det: &[Micros], tol: Micros) -> usize {
    fn augment(d: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &t in &adj[d] {
            if !seen[t] {
                seen[t] = true;
                if owner[t].is_none_or(|o| augment(o, adj, seen, owner)) {
                    owner[t] = Some(d);
                    return true;
                }
            }
        }
        false
    }
    let adj: Vec<Vec<usize>> =
        det.iter().map(|&d| (0..truth.len()).filter(|&t| truth[t].abs_diff(d) <= tol).collect()).collect();
    let mut owner = vec![None; truth.len()];
    (0..det.len()).filter(|&d| augment(d, &adj, &mut vec![false; truth.len()], &mut owner)).count()
}

/// Greedy matching against the maximum matching on instances of at most
/// 20 spikes.
pub fn matching_optimal(cases: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..cases {
        let nt = rng.random_range(0..=10);
        let nd = rng.random_range(0..=20 - nt);
        let span = rng.random_range(1_000..20_000u64);
        let mut truth: Vec<Micros> = (0..nt).map(|_| rng.random_range(0..span)).collect();
        let mut det: Vec<Micros> = (0..nd).map(|_| rng.random_range(0..span)).collect();
        truth.sort_unstable();
        det.sort_unstable();
        let m = match_spikes(&truth, &det, 1000);
        failures += (m.tp != max_matching(&truth, &det, 1000)) as usize;
    }
    CheckOutcome { name: "greedy matching = maximum matching", cases, failures, worst: None }
}

/// All suites with `cases` random instances each.
pub fn run_all(cases: usize, seed: u64) -> Vec<CheckOutcome> {
    vec![
        modulator_residual(cases * 10, seed),
        moving_sum_streaming(cases, seed.wrapping_add(1)),
        neo_affine(cases, seed.wrapping_add(2)),
        abs_threshold_gaussian(cases * 100, seed.wrapping_add(3)),
        matching_optimal(cases, seed.wrapping_add(4)),
    ]
}
