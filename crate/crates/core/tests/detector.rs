use evspike_core::dataset::{BuiltinTemplate, Template};
use evspike_core::encoder::{delta_modulate, Address, AerEvent, Polarity};
use evspike_core::evspd::{
    bin_events, detect, detect_batch, moving_sum, threshold_bins, ChannelDetector, EvSpdParams, MovingSum,
};
use evspike_core::hram::{
    build_stimuli, CalibrationConfig, HramMacro, MacroParams, MismatchSpec, Stimuli, VbpCode, VbpTable,
};
use evspike_core::Micros;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_window_sum(a: &[u8], n_s: usize) -> Vec<u8> {
    (0..a.len()).map(|i| a[i.saturating_sub(n_s - 1)..=i].iter().sum()).collect()
}

/// Detector straight from the definition: bins over the whole span plus
/// drain, strict thresholds, first bin of each above-threshold run fires
/// unless within the refractory period of the previous report.
fn reference_detect(events: &[Micros], p: &EvSpdParams) -> Vec<Micros> {
    let Some(&last) = events.last() else { return Vec::new() };
    let bins = (last / p.t_s_us) as usize + p.n_s;
    let mut count = vec![0u32; bins];
    for &t in events {
        count[(t / p.t_s_us) as usize] += 1;
    }
    let mut out: Vec<Micros> = Vec::new();
    let mut prev_above = false;
    for i in 0..bins {
        let s = (i.saturating_sub(p.n_s - 1)..=i).filter(|&k| count[k] as f64 > p.thr1).count();
        let above = s > p.thr2;
        let t = (i as Micros + 1) * p.t_s_us;
        if above && !prev_above && out.last().is_none_or(|&l| t >= l + p.refractory_us) {
            out.push(t);
        }
        prev_above = above;
    }
    out
}

fn stream() -> impl Strategy<Value = Vec<Micros>> {
    prop::collection::vec(0u64..20_000, 0..400).prop_map(|mut v| {
        v.sort_unstable();
        v
    })
}

fn params() -> impl Strategy<Value = EvSpdParams> {
    (1u64..400, 1usize..=8, 0.5f64..6.0, 0usize..8, 0u64..3000).prop_map(|(t_s, n_s, thr1, thr2, refr)| EvSpdParams {
        t_s_us: t_s,
        n_s,
        thr1,
        thr2: thr2.clamp(1, n_s),
        refractory_us: refr,
    })
}

fn macro_params() -> impl Strategy<Value = EvSpdParams> {
    params().prop_map(|p| EvSpdParams { n_s: 8, thr2: p.thr2.max(1), ..p })
}

#[test]
fn moving_sum_against_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let n_s = rng.random_range(1..=12);
        let a: Vec<u8> = (0..rng.random_range(0..60)).map(|_| rng.random_bool(0.4) as u8).collect();
        let mut m = MovingSum::new(n_s);
        let streamed: Vec<u8> = a.iter().map(|&b| m.push(b)).collect();
        let brute = brute_window_sum(&a, n_s);
        assert_eq!(streamed, brute);
        assert_eq!(moving_sum(&a, n_s), brute);
    }
}

#[test]
fn single_template_burst() {
    let fs = 24_000.0;
    let tpl = Template::builtin(BuiltinTemplate::Triphasic, fs);
    let mut x = vec![0.0; 24 * 40];
    let onset = 24 * 10;
    x[onset..onset + tpl.samples.len()].copy_from_slice(&tpl.samples);
    let pulses = delta_modulate(&x, 0.05, fs).unwrap();
    let p = EvSpdParams { thr1: 2.0, thr2: 2, ..Default::default() };
    let active = bin_events(&pulses, p.t_s_us).iter().filter(|&&c| c as f64 > p.thr1).count();
    assert!(active > p.thr2);
    let det = detect(&pulses, &p).unwrap();
    assert_eq!(det.len(), 1, "{det:?}");
    assert!((10_000..=11_000).contains(&det[0]), "{det:?}");
}

#[test]
fn bursts_half_a_millisecond_apart() {
    let mut ev: Vec<Micros> = (10_000..10_375).step_by(20).collect();
    ev.extend((10_500..10_875).step_by(20));
    let p = EvSpdParams { thr1: 2.0, thr2: 1, ..Default::default() };
    assert_eq!(detect(&ev, &p).unwrap().len(), 1);
}

#[test]
fn calibration_boosts_a_weak_channel() {
    let fs = 24_000.0;
    let tpl = Template::builtin(BuiltinTemplate::Biphasic, fs);
    let mut spike = vec![0.0; 240];
    spike[48..48 + tpl.samples.len()].copy_from_slice(&tpl.samples);
    let stimuli = build_stimuli(&spike, &[0.0; 240], 0.1, fs).unwrap();
    assert!(stimuli.spike.len() >= 10, "{} events", stimuli.spike.len());
    assert!(stimuli.noise.is_empty());

    // pick an integer trip level that the two busiest bins clear at full
    // gain and at 1.25 x 0.7 gain, but not at 0.7 gain
    let mut counts = bin_events(&stimuli.spike, 125);
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let c2 = counts[1] as f64;
    let t = (0..counts[1])
        .map(|t| t as f64)
        .find(|&t| 0.7 * c2 <= t + 0.5 && 0.875 * c2 > t + 0.5)
        .expect("a separating trip level");
    let params = MacroParams::from_detection(&EvSpdParams { thr1: t, thr2: 1, ..Default::default() }).unwrap();
    let cal = CalibrationConfig::default();
    let nominal = HramMacro::new(1, params, MismatchSpec::ideal(), VbpTable::default()).unwrap();
    let ok = nominal.calibrate_channel(0, &stimuli, &cal).unwrap();
    assert_eq!(ok.code, VbpCode::NOMINAL);
    assert_eq!(ok.cost(VbpCode::NOMINAL), 0);

    // a channel whose cells all jump 30% short
    let mut weak = nominal.clone();
    for cell in weak.channel_mut(0).unwrap().bitcells.iter_mut() {
        cell.jump_gain = 0.7;
    }
    let out = weak.calibrate_channel(0, &stimuli, &cal).unwrap();
    assert!(VbpTable::default().multiplier(out.code) > 1.0, "chose {:?}", out.code);
    assert!(out.fn_counts[out.code.get() as usize] < out.fn_counts[1], "{out:?}");
}

#[test]
fn calibration_cost_never_worse_than_nominal() {
    let fs = 24_000.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tpl = Template::builtin(BuiltinTemplate::BiphasicWide, fs);
    let mut spike = vec![0.0; 240];
    spike[48..48 + tpl.samples.len()].copy_from_slice(&tpl.samples);
    let noise: Vec<f64> = (0..240).map(|_| rng.random_range(-0.3..0.3)).collect();
    let stimuli = build_stimuli(&spike, &noise, 0.1, fs).unwrap();
    let params = MacroParams::from_detection(&EvSpdParams { thr1: 2.0, thr2: 1, ..Default::default() }).unwrap();
    let spec = MismatchSpec { jump_cv: 0.3, rng_seed: 9, ..MismatchSpec::default() };
    let mac = HramMacro::new(64, params, spec, VbpTable::default()).unwrap();
    for ch in 0..64 {
        let o = mac.calibrate_channel(ch, &stimuli, &CalibrationConfig::default()).unwrap();
        let best = (0..4).map(|c| o.cost(VbpCode::new(c).unwrap())).min().unwrap();
        assert_eq!(o.cost(o.code), best);
        assert!(o.cost(o.code) <= o.cost(VbpCode::NOMINAL));
    }
    assert!(mac
        .calibrate_channel(0, &Stimuli { spike: vec![], noise: vec![] }, &CalibrationConfig::default())
        .is_err());
}

#[test]
fn routed_macro_equals_reference_per_address() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut events: Vec<AerEvent> = (0..5000)
        .map(|_| AerEvent {
            t_us: rng.random_range(0..50_000),
            address: Address::new(rng.random_range(0..300)).unwrap(),
            polarity: Polarity::On,
        })
        .collect();
    events.sort_by_key(|e| (e.t_us, e.address));
    let p = EvSpdParams { thr1: 1.0, thr2: 1, ..Default::default() };
    let mac = HramMacro::new(300, MacroParams::from_detection(&p).unwrap(), MismatchSpec::ideal(), VbpTable::default())
        .unwrap();
    let out = mac.run(&events, Some(60_000), false).unwrap();
    for ch in 0..300 {
        let lane: Vec<Micros> = events.iter().filter(|e| e.address.index() == ch).map(|e| e.t_us).collect();
        assert_eq!(out.detections[ch], detect(&lane, &p).unwrap(), "channel {ch}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn detect_matches_definition(ev in stream(), p in params()) {
        let want = reference_detect(&ev, &p);
        prop_assert_eq!(detect(&ev, &p).unwrap(), want.clone());
        prop_assert_eq!(detect_batch(&ev, &p).unwrap(), want.clone());
        let mut d = ChannelDetector::new(p).unwrap();
        let mut got = Vec::new();
        for &t in &ev {
            d.push(t, &mut got);
        }
        d.finish(&mut got);
        prop_assert_eq!(got, want.clone());
        prop_assert!(want.windows(2).all(|w| w[1] >= w[0] + p.refractory_us.max(1)));
    }

    #[test]
    fn active_bins_shrink_with_thresholds(ev in stream(), p in params()) {
        let counts = bin_events(&ev, p.t_s_us);
        let a = threshold_bins(&counts, p.thr1);
        let b = threshold_bins(&counts, p.thr1 + 1.0);
        prop_assert!(a.iter().zip(&b).all(|(x, y)| y <= x));
        let s = moving_sum(&a, p.n_s);
        let sb = moving_sum(&b, p.n_s);
        prop_assert!(s.iter().zip(&sb).all(|(x, y)| y <= x));
    }

    #[test]
    fn small_thr1_counts_occupied_bins(ev in stream(), t_s in 1u64..400, n_s in 1usize..=8) {
        let counts = bin_events(&ev, t_s);
        let s = moving_sum(&threshold_bins(&counts, 1e-9), n_s);
        for i in 0..counts.len() {
            let occupied = counts[i.saturating_sub(n_s - 1)..=i].iter().filter(|&&c| c > 0).count();
            prop_assert_eq!(s[i] as usize, occupied);
        }
    }

    #[test]
    fn shift_equivariance(ev in stream(), p in params(), k in 0u64..20) {
        let shift = k * p.t_s_us;
        let moved: Vec<Micros> = ev.iter().map(|t| t + shift).collect();
        let base = detect(&ev, &p).unwrap();
        let want: Vec<Micros> = base.iter().map(|t| t + shift).collect();
        prop_assert_eq!(detect(&moved, &p).unwrap(), want);
    }

    #[test]
    fn ideal_macro_equals_detector(ev in stream(), p in macro_params()) {
        let mac = HramMacro::new(1, MacroParams::from_detection(&p).unwrap(), MismatchSpec::ideal(), VbpTable::default())
            .unwrap();
        let periods = mac.periods_for(ev.last().copied());
        let run = mac.run_channel(0, &ev, periods, true, &mut mac.flip_rng(0, 0)).unwrap();
        prop_assert_eq!(&run.detections, &detect(&ev, &p).unwrap());

        // counter trace is the moving sum read at the end of each period
        let mut counts = bin_events(&ev, p.t_s_us);
        counts.resize(periods as usize, 0);
        let s = moving_sum(&threshold_bins(&counts, p.thr1), 8);
        let trace = run.counters.unwrap();
        prop_assert_eq!(trace, s);
    }
}
