use std::f64::consts::PI;

use vitalsig::dsp::{butterworth_bandpass, filtfilt, BandpassSpec};
use vitalsig::fusion::{fuse, FusionConfig};
use vitalsig::ptt::{sliding_xcorr_lag, PttConfig};
use vitalsig::stats::waveform_corr;
use vitalsig::synth::*;
use vitalsig::TimeSeries;

fn noisy_spec(seed: u64) -> SubjectSpec {
    SubjectSpec {
        hr: RateProfile::Piecewise {
            knots: vec![(0.0, 65.0), (20.0, 90.0), (40.0, 70.0)],
        },
        sites: SubjectSpec::nine_sites(20.0, 60.0)
            .into_iter()
            .map(|s| {
                s.with_noise(NoiseModel::White { sigma: 0.3 })
                    .with_noise(NoiseModel::Burst { start_s: 5.0, duration_s: 2.0, sigma: 3.0 })
                    .with_noise(NoiseModel::Wander { freq_hz: 0.05, amplitude: 0.5 })
            })
            .collect(),
        duration: 45.0,
        contact_fs: 200.0,
        resp_am_depth: 0.2,
        seed,
        ..SubjectSpec::default()
    }
}

#[test]
fn contact_generation_is_deterministic_across_threads() {
    let spec = noisy_spec(42);
    let a = gen_contact_channels(&spec).unwrap();
    let b = gen_contact_channels(&spec).unwrap();
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = pool.install(|| gen_contact_channels(&spec)).unwrap();
    assert_eq!(a, c);
    let other = gen_contact_channels(&noisy_spec(43)).unwrap();
    assert_ne!(a.channels, other.channels);
}

#[test]
fn site_noise_does_not_depend_on_site_order() {
    let spec = noisy_spec(7);
    let mut reversed = spec.clone();
    reversed.sites.reverse();
    let a = gen_contact_channels(&spec).unwrap();
    let b = gen_contact_channels(&reversed).unwrap();
    assert_eq!(a.channels, b.channels);
}

#[test]
fn rgb_and_motion_are_deterministic() {
    let spec = SubjectSpec {
        sites: vec![SiteSpec::new("forehead", 0.0)],
        duration: 40.0,
        seed: 9,
        ..SubjectSpec::default()
    };
    let opts = RgbOptions { noise_snr_db: Some(3.0), ..RgbOptions::default() };
    assert_eq!(
        gen_rgb_trace(&spec, "forehead", &opts).unwrap(),
        gen_rgb_trace(&spec, "forehead", &opts).unwrap()
    );
    let m = MotionOptions::default();
    assert_eq!(gen_motion_matrix(&spec, &m).unwrap(), gen_motion_matrix(&spec, &m).unwrap());
}

#[test]
fn truth_matches_integrated_instantaneous_rate() {
    let spec = noisy_spec(1);
    let rec = gen_contact_channels(&spec).unwrap();
    for (c, r) in rec.truth.centers.iter().zip(&rec.truth.rate) {
        // Midpoint-rule average of the instantaneous rate over the window.
        let steps = 2000;
        let mean: f64 = (0..steps)
            .map(|k| spec.hr.rate(c - 5.0 + 10.0 * (k as f64 + 0.5) / steps as f64))
            .sum::<f64>()
            / steps as f64;
        assert!((mean - r).abs() < 0.5, "t={c}: {mean} vs {r}");
        assert!((mean - r).abs() < 1e-3);
    }
}

#[test]
fn guide_jitter_is_bounded() {
    let spec = noisy_spec(2);
    let rec = gen_contact_channels(&spec).unwrap();
    for (t, bpm) in rec.guide.t.iter().zip(&rec.guide.bpm) {
        assert!((bpm - spec.hr.rate(*t)).abs() <= spec.guide_jitter_bpm + 1e-12);
    }
}

#[test]
fn noiseless_sites_are_identical_and_fuse_to_the_fundamental() {
    let spec = SubjectSpec {
        sites: SubjectSpec::nine_sites(0.0, 0.0),
        duration: 40.0,
        contact_fs: 100.0,
        ..SubjectSpec::default()
    };
    let rec = gen_contact_channels(&spec).unwrap();
    let first = rec.channels.get("forehead").unwrap();
    assert!(rec.channels.iter().all(|(_, ts)| ts == first));
    let fused = fuse(&rec.channels, &rec.guide, &FusionConfig::default()).unwrap();
    // The ±30 bpm band keeps only the template's first harmonic.
    let fundamental = TimeSeries::from_fn(first.len(), spec.contact_fs, |t| {
        (2.0 * PI * spec.hr.cycles(t)).sin()
    })
    .unwrap();
    let r = waveform_corr(&fused, &fundamental).unwrap();
    assert!(r > 0.999, "{r}");
}

#[test]
fn transits_are_recovered_by_cross_correlation() {
    let spec = SubjectSpec {
        sites: vec![SiteSpec::new("face", 0.0), SiteSpec::new("arm", 20.0), SiteSpec::new("leg", 60.0)],
        duration: 30.0,
        ..SubjectSpec::default()
    };
    let rec = gen_contact_channels(&spec).unwrap();
    let filter = butterworth_bandpass(BandpassSpec::from_bpm(40.0, 180.0, 4), spec.contact_fs).unwrap();
    let get = |n: &str| filtfilt(&filter, rec.channels.get(n).unwrap()).unwrap();
    let face = get("face");
    let cfg = PttConfig { stride: 0.25, ..PttConfig::default() };
    for (site, expected) in [("arm", 20.0), ("leg", 60.0)] {
        let s = sliding_xcorr_lag(&face, &get(site), &cfg, ("face", site)).unwrap();
        for lag in s.lags() {
            assert!((lag - expected).abs() <= 5.0, "{site}: {lag}");
        }
    }
}

#[test]
fn all_zero_motion_spec_gives_zero_matrix() {
    let spec = SubjectSpec { duration: 10.0, ..SubjectSpec::default() };
    let opts = MotionOptions {
        signal_columns: vec![],
        noise_sigma: 0.0,
        ..MotionOptions::default()
    };
    let (m, _) = gen_motion_matrix(&spec, &opts).unwrap();
    assert!(m.data().iter().all(|v| *v == 0.0));
    assert_eq!(m.rows(), 300);
}

#[test]
fn invalid_rgb_options_are_rejected() {
    let spec = SubjectSpec {
        sites: vec![SiteSpec::new("forehead", 0.0)],
        ..SubjectSpec::default()
    };
    for strength in [0.0, -0.01, 0.06] {
        let opts = RgbOptions { pulse_strength: strength, ..RgbOptions::default() };
        assert!(gen_rgb_trace(&spec, "forehead", &opts).is_err());
    }
    assert!(gen_rgb_trace(&spec, "nose", &RgbOptions::default()).is_err());
}

#[test]
fn attack_ramps_linearly() {
    let a = AttackSpec {
        freq_bpm: 120.0,
        onset: 680.0,
        duration: 120.0,
        start_amplitude: 0.01,
        end_amplitude: 0.03,
    };
    assert_eq!(a.depth(679.9), 0.0);
    assert_eq!(a.depth(680.0), 0.01);
    assert!((a.depth(740.0) - 0.02).abs() < 1e-15);
    assert_eq!(a.depth(800.0), 0.0);
}
