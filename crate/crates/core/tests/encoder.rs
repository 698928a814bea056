use evspike_core::dataset::Recording;
use evspike_core::encoder::{
    delta_modulate, encode_recording, pick_threshold, reconstruct, split_channels, Polarity, ThresholdMode,
};
use proptest::prelude::*;

/// Straight transcription of the modulator loop: per-sample signed pulse
/// counts and the reconstruction level after each sample.
fn reference_counts(x: &[f64], thr: f64) -> (Vec<i64>, Vec<f64>) {
    let mut v = 0.0;
    let mut counts = Vec::new();
    let mut levels = Vec::new();
    for &s in x {
        let d = s - v;
        let n = if d > thr {
            (d / thr).floor() as i64
        } else if d < -thr {
            -((-d / thr).floor() as i64)
        } else {
            0
        };
        v += n as f64 * thr;
        counts.push(n);
        levels.push(v);
    }
    (counts, levels)
}

fn signal() -> impl Strategy<Value = (Vec<f64>, f64)> {
    (prop::collection::vec(-3.0f64..3.0, 1..80), 0.02f64..1.0)
}

#[test]
fn hand_executed_examples() {
    let up = delta_modulate(&[0.0, 0.35], 0.1, 24_000.0).unwrap();
    assert_eq!(up.len(), 3);
    assert!(up.iter().all(|p| p.polarity == Polarity::On));
    // second sample interval is [41.67, 83.33] us
    assert!(up.iter().all(|p| (41..=84).contains(&p.t_us)), "{up:?}");
    assert!((reconstruct(&up, 0.1).final_level() - 0.3).abs() < 1e-12);

    let down = delta_modulate(&[0.0, -0.25], 0.1, 24_000.0).unwrap();
    assert_eq!(down.len(), 2);
    assert!(down.iter().all(|p| p.polarity == Polarity::Off));
    assert!((reconstruct(&down, 0.1).final_level() + 0.2).abs() < 1e-12);

    assert!(delta_modulate(&[0.4; 100], 0.5, 24_000.0).unwrap().is_empty());
}

#[test]
fn thresholds_from_ground_truth() {
    // one spike window peaking at 1.0 with p2p 1.6
    let fs = 24_000.0;
    let mut x = vec![0.0; 2400];
    x[500] = 1.0;
    x[510] = -0.6;
    let rec = Recording::new(fs, vec![x], Some(vec![vec![500.0 / fs]])).unwrap();
    let peak = pick_threshold(&rec, ThresholdMode::FractionOfPeak(0.1), 0.5).unwrap();
    assert!((peak.thresholds[0] - 0.1).abs() < 1e-12);
    let p2p = pick_threshold(&rec, ThresholdMode::FractionOfP2p(0.5), 0.5).unwrap();
    assert!((p2p.thresholds[0] - 0.8).abs() < 1e-12);
    let fixed = pick_threshold(&rec, ThresholdMode::Fixed(0.07), 0.5).unwrap();
    assert_eq!(fixed.thresholds, vec![0.07]);
    assert_eq!(fixed.fell_back, vec![false]);
}

#[test]
fn identical_channels_interleave() {
    let x: Vec<f64> = (0..200).map(|n| (n as f64 * 0.2).sin()).collect();
    let rec = Recording::new(24_000.0, vec![x.clone(), x.clone()], None).unwrap();
    let events = encode_recording(&rec, &[0.1, 0.1]).unwrap();
    let single = delta_modulate(&x, 0.1, 24_000.0).unwrap();
    assert_eq!(events.len(), 2 * single.len());
    for pair in events.chunks(2) {
        assert_eq!(pair[0].t_us, pair[1].t_us);
        assert_eq!((pair[0].address.index(), pair[1].address.index()), (0, 1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn matches_reference_and_reconstructs((x, thr) in signal()) {
        let pulses = delta_modulate(&x, thr, 24_000.0).unwrap();
        let (counts, levels) = reference_counts(&x, thr);
        prop_assert_eq!(pulses.len() as i64, counts.iter().map(|c| c.abs()).sum::<i64>());

        // walk the pulse list sample by sample using the reference counts
        let stair = reconstruct(&pulses, thr);
        let mut k = 0usize;
        for (i, (&c, &level)) in counts.iter().zip(&levels).enumerate() {
            for p in &pulses[k..k + c.unsigned_abs() as usize] {
                prop_assert_eq!(p.polarity, if c > 0 { Polarity::On } else { Polarity::Off });
            }
            k += c.unsigned_abs() as usize;
            let x_hat = if k == 0 { 0.0 } else { stair.steps[k - 1].1 };
            prop_assert!((x_hat - level).abs() < 1e-9);
            prop_assert!((x[i] - x_hat).abs() < thr, "sample {} residual {}", i, x[i] - x_hat);
        }
        prop_assert!(pulses.windows(2).all(|w| w[0].t_us < w[1].t_us));
    }

    #[test]
    fn doubling_threshold_never_adds_events((x, thr) in signal()) {
        let a = delta_modulate(&x, thr, 24_000.0).unwrap().len();
        let b = delta_modulate(&x, 2.0 * thr, 24_000.0).unwrap().len();
        prop_assert!(b <= a, "{} events at 2x threshold vs {}", b, a);
    }

    #[test]
    fn merge_is_stable(chans in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 40), 1..6), thr in 0.05f64..0.5) {
        let rec = Recording::new(24_000.0, chans.clone(), None).unwrap();
        let events = encode_recording(&rec, &vec![thr; chans.len()]).unwrap();
        prop_assert!(events.windows(2).all(|w| (w[0].t_us, w[0].address) <= (w[1].t_us, w[1].address)));
        let split = split_channels(&events, chans.len()).unwrap();
        for (x, lane) in chans.iter().zip(&split) {
            prop_assert_eq!(lane, &delta_modulate(x, thr, 24_000.0).unwrap());
        }
    }
}
