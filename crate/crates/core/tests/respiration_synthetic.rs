use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vitalsig::dsp::{band_snr, RateBand};
use vitalsig::respiration::{estimate_resp_rate, resp_from_motion, resp_from_ppg, zca_whiten, MotionMatrix, RespConfig};
use vitalsig::signal::znormalize;
use vitalsig::stats::{align_rate_series, hr_errors};
use vitalsig::synth::{gen_contact_channels, gen_motion_matrix, windowed_true_rate, MotionOptions, NoiseModel, RateProfile, SubjectSpec};
use vitalsig::{ChannelSet, TimeSeries};

fn column_covariance(m: &MotionMatrix) -> Vec<Vec<f64>> {
    let n = m.rows() as f64;
    let cols: Vec<Vec<f64>> = (0..MotionMatrix::COLUMNS)
        .map(|c| {
            let x = m.column(c);
            let mean = x.iter().sum::<f64>() / n;
            x.iter().map(|v| v - mean).collect()
        })
        .collect();
    cols.iter()
        .map(|a| cols.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / n).collect())
        .collect()
}

fn max_deviation_from_identity(cov: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in cov.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }
    worst
}

fn gaussian_matrix(rows: usize, seed: u64) -> MotionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..rows * 100).map(|_| StandardNormal.sample(&mut rng)).collect();
    // Correlate neighbouring columns so whitening has work to do.
    let mut data = raw.clone();
    for i in 0..rows {
        for c in 1..100 {
            data[i * 100 + c] += 0.5 * raw[i * 100 + c - 1] + 0.3 * raw[i * 100];
        }
    }
    MotionMatrix::new(data, rows, 30.0).unwrap()
}

fn respiring_channels(resp: RateProfile, duration: f64, seed: u64) -> (ChannelSet, SubjectSpec) {
    let spec = SubjectSpec {
        resp,
        sites: SubjectSpec::nine_sites(20.0, 60.0)
            .into_iter()
            .map(|s| s.with_noise(NoiseModel::White { sigma: 0.2 }))
            .collect(),
        duration,
        contact_fs: 50.0,
        resp_am_depth: 0.3,
        resp_baseline: 0.3,
        seed,
        ..SubjectSpec::default()
    };
    (gen_contact_channels(&spec).unwrap().channels, spec)
}

fn resp_truth(spec: &SubjectSpec, fs: f64, n: usize) -> vitalsig::dsp::RateSeries {
    windowed_true_rate(&spec.resp, fs, n, 30.0, 1.0, RateBand::from_bpm(6.0, 30.0))
}

#[test]
fn ppg_route_recovers_constant_breathing() {
    let (channels, _) = respiring_channels(RateProfile::Constant { bpm: 15.0 }, 120.0, 1);
    let cfg = RespConfig::default();
    let rate = estimate_resp_rate(&resp_from_ppg(&channels, &cfg).unwrap(), &cfg).unwrap();
    for r in &rate.rate {
        assert!((r - 15.0).abs() <= 0.5, "{r}");
    }
}

#[test]
fn ppg_route_single_tone() {
    let ts = TimeSeries::from_fn(3000, 25.0, |t| (2.0 * PI * 0.25 * t).sin()).unwrap();
    let channels: ChannelSet = [("a".to_string(), ts)].into_iter().collect();
    let cfg = RespConfig::default();
    let out = resp_from_ppg(&channels, &cfg).unwrap();
    for r in estimate_resp_rate(&out, &cfg).unwrap().rate {
        assert!((r - 15.0).abs() <= 0.1, "{r}");
    }
}

#[test]
fn ppg_route_rejects_pulse_band() {
    // Each record edge leaves a fixed amount of filter ringing, so the
    // record is long enough for in-band leakage to dominate the ratio.
    let spec = SubjectSpec {
        sites: SubjectSpec::nine_sites(20.0, 60.0),
        duration: 300.0,
        contact_fs: 50.0,
        ..SubjectSpec::default()
    };
    let channels = gen_contact_channels(&spec).unwrap().channels;
    let out = resp_from_ppg(&channels, &RespConfig::default()).unwrap();
    let mut input = vec![0.0; out.len()];
    for (_, ts) in channels.iter() {
        for (acc, v) in input.iter_mut().zip(znormalize(ts).unwrap().samples()) {
            *acc += v;
        }
    }
    let power = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let ratio = power(out.samples()) / power(&input);
    assert!(ratio < 0.01, "{ratio}");
}

#[test]
fn ppg_route_ignores_order_and_gain() {
    let (channels, _) = respiring_channels(RateProfile::Constant { bpm: 12.0 }, 60.0, 2);
    let cfg = RespConfig::default();
    let reference = resp_from_ppg(&channels, &cfg).unwrap();
    let shuffled: ChannelSet = channels
        .iter()
        .enumerate()
        .map(|(k, (_, ts))| {
            let gain = 1.0 + k as f64;
            (format!("z{}", 9 - k), ts.with_samples(ts.samples().iter().map(|v| v * gain).collect()).unwrap())
        })
        .collect();
    let out = resp_from_ppg(&shuffled, &cfg).unwrap();
    for (a, b) in out.samples().iter().zip(reference.samples()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn zca_whitens_diagonal_covariance_exactly() {
    // Cosine basis columns are exactly orthogonal with zero mean.
    let rows = 1000;
    let cols: Vec<Vec<f64>> = (0..100)
        .map(|c| {
            let amp = if c == 0 { 8f64.sqrt() } else { 2f64.sqrt() };
            (0..rows)
                .map(|i| amp * (PI * (c + 1) as f64 * (i as f64 + 0.5) / rows as f64).cos())
                .collect()
        })
        .collect();
    let m = MotionMatrix::from_columns(&cols, 30.0).unwrap();
    let cov_in = column_covariance(&m);
    assert!((cov_in[0][0] - 4.0).abs() < 1e-9 && (cov_in[1][1] - 1.0).abs() < 1e-9);
    let w = zca_whiten(&m, Some(1e-12)).unwrap();
    let dev = max_deviation_from_identity(&column_covariance(&w.matrix));
    assert!(dev < 1e-8, "{dev}");
    // Already white apart from one column: the whitening map is near-diagonal.
    for (a, b) in w.matrix.column(1).iter().zip(m.column(1)) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn zca_on_random_full_rank_matrix() {
    let m = gaussian_matrix(2000, 7);
    let w = zca_whiten(&m, None).unwrap();
    assert!(!w.rank_deficient);
    let dev = max_deviation_from_identity(&column_covariance(&w.matrix));
    assert!(dev < 1e-6, "{dev}");
}

#[test]
fn zca_is_idempotent() {
    let m = gaussian_matrix(1500, 8);
    let once = zca_whiten(&m, None).unwrap().matrix;
    let twice = zca_whiten(&once, None).unwrap().matrix;
    let worst = once
        .data()
        .iter()
        .zip(twice.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn zca_flags_duplicated_columns() {
    let m = gaussian_matrix(500, 9);
    let mut cols: Vec<Vec<f64>> = (0..100).map(|c| m.column(c)).collect();
    cols[42] = cols[17].clone();
    let dup = MotionMatrix::from_columns(&cols, 30.0).unwrap();
    assert!(zca_whiten(&dup, None).unwrap().rank_deficient);
}

#[test]
fn motion_route_recovers_constant_breathing() {
    let spec = SubjectSpec {
        duration: 90.0,
        seed: 4,
        ..SubjectSpec::default()
    };
    let (m, truth) = gen_motion_matrix(&spec, &MotionOptions::default()).unwrap();
    let cfg = RespConfig::default();
    let out = resp_from_motion(&m, &cfg).unwrap();
    assert!(!out.low_confidence);
    let rate = estimate_resp_rate(&out.waveform, &cfg).unwrap();
    assert_eq!(rate.len(), truth.len());
    for r in &rate.rate {
        assert!((r - 15.0).abs() <= 0.5, "{r}");
    }
}

#[test]
fn motion_route_on_pure_noise_is_low_confidence() {
    let cfg = RespConfig::default();
    for seed in 0..20 {
        let spec = SubjectSpec {
            duration: 60.0,
            seed: 1000 + seed,
            ..SubjectSpec::default()
        };
        let opts = MotionOptions {
            signal_columns: vec![],
            noise_sigma: 1.0,
            ..MotionOptions::default()
        };
        let (m, _) = gen_motion_matrix(&spec, &opts).unwrap();
        let out = resp_from_motion(&m, &cfg).unwrap();
        assert!(out.snr < 2.0, "seed {seed}: {}", out.snr);
        assert!(out.low_confidence, "seed {seed}: {}", out.snr);
    }
}

#[test]
fn motion_route_ignores_column_order() {
    let spec = SubjectSpec {
        duration: 60.0,
        seed: 5,
        ..SubjectSpec::default()
    };
    let (m, _) = gen_motion_matrix(&spec, &MotionOptions::default()).unwrap();
    let cfg = RespConfig::default();
    let reference = resp_from_motion(&m, &cfg).unwrap();
    let perm: Vec<usize> = (0..100).map(|c| (c * 37 + 11) % 100).collect();
    let cols: Vec<Vec<f64>> = perm.iter().map(|&c| m.column(c)).collect();
    let permuted = MotionMatrix::from_columns(&cols, m.fs()).unwrap();
    let out = resp_from_motion(&permuted, &cfg).unwrap();
    for (a, b) in out.waveform.samples().iter().zip(reference.waveform.samples()) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn frequency_modulated_breathing_both_routes() {
    let resp = RateProfile::Chirp {
        start_bpm: 10.0,
        end_bpm: 20.0,
        start_s: 0.0,
        end_s: 120.0,
    };
    let cfg = RespConfig::default();

    let (channels, spec) = respiring_channels(resp.clone(), 120.0, 6);
    let out = resp_from_ppg(&channels, &cfg).unwrap();
    let est = estimate_resp_rate(&out, &cfg).unwrap();
    let truth = resp_truth(&spec, out.fs(), out.len());
    let (t, e) = align_rate_series(&truth, &est);
    let ppg = hr_errors(&t, &e).unwrap();
    assert!(ppg.mae <= 1.09, "ppg {ppg:?}");

    let spec = SubjectSpec {
        resp,
        duration: 120.0,
        seed: 6,
        ..SubjectSpec::default()
    };
    let (m, truth) = gen_motion_matrix(&spec, &MotionOptions::default()).unwrap();
    let out = resp_from_motion(&m, &cfg).unwrap();
    let est = estimate_resp_rate(&out.waveform, &cfg).unwrap();
    let motion = hr_errors(&truth, &est).unwrap();
    assert!(motion.mae <= 1.09, "motion {motion:?}");
}

#[test]
fn short_motion_record_is_rejected() {
    let spec = SubjectSpec {
        duration: 20.0,
        ..SubjectSpec::default()
    };
    let (m, _) = gen_motion_matrix(&spec, &MotionOptions::default()).unwrap();
    assert!(resp_from_motion(&m, &RespConfig::default()).is_err());
    let ts = TimeSeries::from_fn(600, 30.0, |t| t.sin()).unwrap();
    assert!(band_snr(&ts, RateBand::from_bpm(10.0, 20.0)).is_ok());
}
