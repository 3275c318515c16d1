use vitalsig::dsp::estimate_hr_series;
use vitalsig::rppg::{self, RppgConfig};
use vitalsig::synth::{gen_rgb_trace, AttackSpec, Flicker, RgbOptions, SiteSpec, SubjectSpec};
use vitalsig::stats::hr_errors;
use vitalsig::synth::windowed_true_rate;
use vitalsig::dsp::HR_BAND;
use vitalsig::RgbTrace;

fn subject(seed: u64, duration: f64) -> SubjectSpec {
    SubjectSpec {
        sites: vec![SiteSpec::new("forehead", 0.0)],
        seed,
        duration,
        ..SubjectSpec::default()
    }
}

fn methods() -> [RppgConfig; 2] {
    [RppgConfig::chrom(), RppgConfig::pos()]
}

fn hr_of(trace: &RgbTrace, cfg: &RppgConfig) -> Vec<f64> {
    let bvp = rppg::extract(trace, cfg).unwrap();
    estimate_hr_series(&bvp, 10.0, 1.0).unwrap().rate
}

#[test]
fn clean_trace_recovers_rate_in_every_window() {
    let spec = subject(1, 60.0);
    let trace = gen_rgb_trace(&spec, "forehead", &RgbOptions::default()).unwrap();
    for cfg in methods() {
        let rates = hr_of(&trace, &cfg);
        assert_eq!(rates.len(), 51);
        for r in rates {
            assert!((r - 72.0).abs() <= 0.5, "{:?}: {r}", cfg.method);
        }
    }
}

#[test]
fn clean_trace_mae_against_generator_truth() {
    let spec = subject(2, 60.0);
    let trace = gen_rgb_trace(&spec, "forehead", &RgbOptions::default()).unwrap();
    let truth = windowed_true_rate(&spec.hr, spec.video_fs, trace.len(), 10.0, 1.0, HR_BAND);
    for cfg in methods() {
        let bvp = rppg::extract(&trace, &cfg).unwrap();
        let est = estimate_hr_series(&bvp, 10.0, 1.0).unwrap();
        let e = hr_errors(&truth, &est).unwrap();
        assert!(e.mae < 0.5, "{:?}: {e:?}", cfg.method);
    }
}

#[test]
fn uniform_flicker_is_cancelled_by_chrom() {
    let spec = subject(3, 60.0);
    let opts = RgbOptions {
        flicker: Some(Flicker { freq_hz: 0.3, depth: 0.02 }),
        ..RgbOptions::default()
    };
    let trace = gen_rgb_trace(&spec, "forehead", &opts).unwrap();
    for r in hr_of(&trace, &RppgConfig::chrom()) {
        assert!((r - 72.0).abs() <= 0.5, "{r}");
    }
}

#[test]
fn zero_db_noise_over_twenty_seeds() {
    for cfg in methods() {
        let mut good = 0;
        let mut total = 0;
        for seed in 0..20 {
            let spec = subject(100 + seed, 60.0);
            let opts = RgbOptions {
                noise_snr_db: Some(0.0),
                ..RgbOptions::default()
            };
            let trace = gen_rgb_trace(&spec, "forehead", &opts).unwrap();
            for r in hr_of(&trace, &cfg) {
                total += 1;
                if (r - 72.0).abs() <= 2.0 {
                    good += 1;
                }
            }
        }
        let frac = good as f64 / total as f64;
        assert!(frac >= 0.9, "{:?}: {frac}", cfg.method);
    }
}

#[test]
fn attack_dominates_inside_its_window_only() {
    let spec = subject(4, 200.0);
    let pulse = RgbOptions::default().pulse_strength;
    let attack = AttackSpec {
        freq_bpm: 120.0,
        onset: 60.0,
        duration: 80.0,
        start_amplitude: 5.0 * pulse,
        end_amplitude: 5.0 * pulse,
    };
    let opts = RgbOptions {
        attack: Some(attack),
        ..RgbOptions::default()
    };
    let trace = gen_rgb_trace(&spec, "forehead", &opts).unwrap();
    let bvp = rppg::pos(&trace, &RppgConfig::pos()).unwrap();
    let hr = estimate_hr_series(&bvp, 10.0, 1.0).unwrap();
    let mut inside = 0;
    let mut outside = 0;
    for (c, r) in hr.centers.iter().zip(&hr.rate) {
        let (a, b) = (c - 5.0, c + 5.0);
        if a >= 60.0 && b <= 140.0 {
            inside += 1;
            assert!((r - 120.0).abs() <= 1.0, "t={c}: {r}");
        } else if b <= 60.0 || a >= 140.0 {
            outside += 1;
            assert!((r - 72.0).abs() <= 1.0, "t={c}: {r}");
        }
    }
    assert!(inside > 60 && outside > 100);
}

#[test]
fn per_channel_gains_do_not_change_rate() {
    let spec = subject(5, 40.0);
    let opts = RgbOptions {
        noise_snr_db: Some(10.0),
        ..RgbOptions::default()
    };
    let trace = gen_rgb_trace(&spec, "forehead", &opts).unwrap();
    for cfg in methods() {
        let reference = hr_of(&trace, &cfg);
        for gains in [[2.0, 2.0, 2.0], [0.5, 1.7, 3.1], [10.0, 0.1, 1.0]] {
            let [r, g, b] = trace.channels();
            let scaled = RgbTrace::new(
                r.iter().map(|v| v * gains[0]).collect(),
                g.iter().map(|v| v * gains[1]).collect(),
                b.iter().map(|v| v * gains[2]).collect(),
                trace.fs(),
            )
            .unwrap();
            assert_eq!(hr_of(&scaled, &cfg), reference, "{:?} {gains:?}", cfg.method);
        }
    }
}

#[test]
fn output_length_matches_input() {
    let spec = subject(6, 13.3);
    let trace = gen_rgb_trace(&spec, "forehead", &RgbOptions::default()).unwrap();
    for cfg in methods() {
        assert_eq!(rppg::extract(&trace, &cfg).unwrap().len(), trace.len());
    }
}

#[test]
fn dithered_constant_trace_gives_near_zero_output() {
    let n = 900;
    let dither = |i: usize, c: usize| 1e-9 * (((i * 7 + c * 3) % 5) as f64 - 2.0);
    let trace = RgbTrace::new(
        (0..n).map(|i| 170.0 + dither(i, 0)).collect(),
        (0..n).map(|i| 120.0 + dither(i, 1)).collect(),
        (0..n).map(|i| 100.0 + dither(i, 2)).collect(),
        90.0,
    )
    .unwrap();
    for cfg in methods() {
        let out = rppg::extract(&trace, &cfg).unwrap();
        let rms = (out.samples().iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        assert!(rms < 1e-6, "{:?}: {rms}", cfg.method);
    }
}
