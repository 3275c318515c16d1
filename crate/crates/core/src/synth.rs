//! Deterministic synthetic multi-site subjects.
//!
//! Each artifact draws from its own ChaCha stream keyed by the subject seed
//! and a stable label, so channels can be generated in any order or in
//! parallel with bit-identical results.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{RateBand, RateSeries, HR_BAND};
use crate::error::{Error, Result};
use crate::fusion::GuideRate;
use crate::respiration::MotionMatrix;
use crate::signal::{ChannelSet, RgbTrace, TimeSeries};

/// Rate (per minute) as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateProfile {
    Constant { bpm: f64 },
    /// Linear sweep between `start_s` and `end_s`, held constant outside.
    Chirp {
        start_bpm: f64,
        end_bpm: f64,
        start_s: f64,
        end_s: f64,
    },
    /// Linear interpolation between `(t, bpm)` knots, held outside.
    Piecewise { knots: Vec<(f64, f64)> },
}

impl RateProfile {
    fn knots(&self) -> Vec<(f64, f64)> {
        match self {
            Self::Constant { bpm } => vec![(0.0, *bpm)],
            Self::Chirp {
                start_bpm,
                end_bpm,
                start_s,
                end_s,
            } => vec![(*start_s, *start_bpm), (*end_s, *end_bpm)],
            Self::Piecewise { knots } => knots.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        let knots = self.knots();
        if knots.is_empty() || knots.iter().any(|(t, r)| !t.is_finite() || !(*r >= 0.0)) {
            return Err(Error::InvalidParameter(format!("invalid rate profile {self:?}")));
        }
        if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidParameter("rate profile knots must be increasing".into()));
        }
        Ok(())
    }

    /// Instantaneous rate, per minute.
    pub fn rate(&self, t: f64) -> f64 {
        let knots = self.knots();
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if t <= first.0 {
            return first.1;
        }
        if t >= last.0 {
            return last.1;
        }
        let i = knots.partition_point(|k| k.0 <= t);
        let (a, b) = (knots[i - 1], knots[i]);
        a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
    }

    /// Number of cycles elapsed between 0 and `t` (negative for `t < 0`).
    pub fn cycles(&self, t: f64) -> f64 {
        self.integral(0.0, t) / 60.0
    }

    /// Mean rate over `[a, b]`, per minute.
    pub fn mean_rate(&self, a: f64, b: f64) -> f64 {
        self.integral(a, b) / (b - a)
    }

    /// Exact integral of the piecewise-linear rate over `[a, b]`.
    fn integral(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.integral(b, a);
        }
        let mut points = vec![a];
        points.extend(self.knots().iter().map(|k| k.0).filter(|&t| t > a && t < b));
        points.push(b);
        points
            .windows(2)
            .map(|w| 0.5 * (self.rate(w[0]) + self.rate(w[1])) * (w[1] - w[0]))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    White { sigma: f64 },
    /// Gaussian noise active on `[start_s, start_s + duration_s)`.
    Burst {
        start_s: f64,
        duration_s: f64,
        sigma: f64,
    },
    /// Slow sinusoidal baseline drift.
    Wander { freq_hz: f64, amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSpec {
    pub name: String,
    /// Pulse arrival delay of this site, milliseconds.
    pub transit_ms: f64,
    #[serde(default = "one")]
    pub gain: f64,
    #[serde(default)]
    pub noise: Vec<NoiseModel>,
}

fn one() -> f64 {
    1.0
}

impl SiteSpec {
    pub fn new(name: impl Into<String>, transit_ms: f64) -> Self {
        Self {
            name: name.into(),
            transit_ms,
            gain: 1.0,
            noise: Vec::new(),
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise.push(noise);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectSpec {
    pub hr: RateProfile,
    pub resp: RateProfile,
    pub sites: Vec<SiteSpec>,
    pub seed: u64,
    pub duration: f64,
    pub contact_fs: f64,
    pub video_fs: f64,
    pub guide_fs: f64,
    /// Relative amplitudes of the pulse harmonics.
    pub harmonics: Vec<f64>,
    /// Respiratory amplitude modulation depth of the pulse.
    pub resp_am_depth: f64,
    /// Additive respiration-synchronous baseline, in pulse amplitude units.
    pub resp_baseline: f64,
    /// Half-width of the uniform jitter added to the guide rate, bpm.
    pub guide_jitter_bpm: f64,
}

impl Default for SubjectSpec {
    fn default() -> Self {
        Self {
            hr: RateProfile::Constant { bpm: 72.0 },
            resp: RateProfile::Constant { bpm: 15.0 },
            sites: Vec::new(),
            seed: 0,
            duration: 60.0,
            contact_fs: 400.0,
            video_fs: 90.0,
            guide_fs: 60.0,
            harmonics: vec![1.0, 0.4, 0.2],
            resp_am_depth: 0.0,
            resp_baseline: 0.0,
            guide_jitter_bpm: 0.5,
        }
    }
}

/// Site names of the nine contact sensors.
pub const CONTACT_SITES: [&str; 9] = [
    "forehead",
    "left_wrist",
    "right_wrist",
    "left_forearm",
    "right_forearm",
    "left_ankle",
    "right_ankle",
    "left_knee",
    "right_knee",
];

impl SubjectSpec {
    /// Nine contact sites with arm sensors delayed by `arm_ms` and leg
    /// sensors by `leg_ms` relative to the forehead.
    pub fn nine_sites(arm_ms: f64, leg_ms: f64) -> Vec<SiteSpec> {
        CONTACT_SITES
            .iter()
            .map(|&name| {
                let transit = if name.contains("wrist") || name.contains("forearm") {
                    arm_ms
                } else if name.contains("ankle") || name.contains("knee") {
                    leg_ms
                } else {
                    0.0
                };
                SiteSpec::new(name, transit)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.hr.validate()?;
        self.resp.validate()?;
        if !(self.duration > 0.0) {
            return Err(Error::InvalidParameter("duration must be positive".into()));
        }
        for fs in [self.contact_fs, self.video_fs, self.guide_fs] {
            if !(fs > 0.0) {
                return Err(Error::InvalidSamplingRate(fs));
            }
        }
        if let Some(site) = self.sites.iter().find(|s| !(0.0..=200.0).contains(&s.transit_ms)) {
            return Err(Error::InvalidParameter(format!(
                "site {} transit {} ms outside [0, 200]",
                site.name, site.transit_ms
            )));
        }
        let mut names: Vec<&str> = self.sites.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("duplicate site names".into()));
        }
        Ok(())
    }

    fn site(&self, name: &str) -> Result<&SiteSpec> {
        self.sites
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown site {name:?}")))
    }

    /// Pulse template value at time `t` (no transit delay, no modulation).
    pub fn pulse(&self, t: f64) -> f64 {
        let phase = 2.0 * PI * self.hr.cycles(t);
        self.harmonics
            .iter()
            .enumerate()
            .map(|(k, a)| a * ((k + 1) as f64 * phase).sin())
            .sum()
    }

    /// Respiration waveform `sin(2π · breaths(t))`.
    pub fn breathing(&self, t: f64) -> f64 {
        (2.0 * PI * self.resp.cycles(t)).sin()
    }

    fn pulse_rms(&self) -> f64 {
        (self.harmonics.iter().map(|a| a * a).sum::<f64>() / 2.0).sqrt()
    }

    /// Noise-free waveform of a site.
    pub fn clean_site_waveform(&self, site: &SiteSpec, t: f64) -> f64 {
        let delayed = t - site.transit_ms / 1000.0;
        let breath = self.breathing(t);
        site.gain * (self.pulse(delayed) * (1.0 + self.resp_am_depth * breath) + self.resp_baseline * breath)
    }
}

/// Stable 64-bit FNV-1a hash; selects the random stream for a label.
fn stream_id(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(label));
    rng
}

fn add_noise(x: &mut [f64], fs: f64, noise: &[NoiseModel], rng: &mut ChaCha8Rng) {
    for model in noise {
        match *model {
            NoiseModel::White { sigma } if sigma > 0.0 => {
                let dist = Normal::new(0.0, sigma).expect("finite sigma");
                x.iter_mut().for_each(|v| *v += dist.sample(rng));
            }
            NoiseModel::Burst {
                start_s,
                duration_s,
                sigma,
            } if sigma > 0.0 => {
                let dist = Normal::new(0.0, sigma).expect("finite sigma");
                let a = ((start_s * fs).ceil().max(0.0) as usize).min(x.len());
                let b = (((start_s + duration_s) * fs).ceil().max(0.0) as usize).min(x.len());
                x[a..b].iter_mut().for_each(|v| *v += dist.sample(rng));
            }
            NoiseModel::Wander { freq_hz, amplitude } => {
                for (i, v) in x.iter_mut().enumerate() {
                    *v += amplitude * (2.0 * PI * freq_hz * i as f64 / fs).sin();
                }
            }
            _ => {}
        }
    }
}

/// Mean true rate of `profile` over every window of an STFT grid identical to
/// the one [`crate::dsp::estimate_rate_series`] uses for a signal of `n`
/// samples at `fs`.
pub fn windowed_true_rate(profile: &RateProfile, fs: f64, n: usize, window: f64, hop: f64, band: RateBand) -> RateSeries {
    let width = (window * fs).round() as usize;
    let hop_n = ((hop * fs).round() as usize).max(1);
    let starts: Vec<usize> = if width <= n { (0..=n - width).step_by(hop_n).collect() } else { Vec::new() };
    RateSeries {
        centers: starts
            .iter()
            .map(|&s| (s as f64 + width as f64 / 2.0) / fs)
            .collect(),
        rate: starts
            .iter()
            .map(|&s| profile.mean_rate(s as f64 / fs, (s + width) as f64 / fs))
            .collect(),
        confident: vec![true; starts.len()],
        window: width as f64 / fs,
        hop: hop_n as f64 / fs,
        band,
    }
}

/// Contact recording: channels, oximeter guide, and the true windowed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactRecording {
    pub channels: ChannelSet,
    pub guide: GuideRate,
    pub truth: RateSeries,
}

pub fn gen_contact_channels(spec: &SubjectSpec) -> Result<ContactRecording> {
    spec.validate()?;
    let fs = spec.contact_fs;
    let n = (spec.duration * fs).round() as usize;
    let channels = spec
        .sites
        .par_iter()
        .map(|site| {
            let mut x: Vec<f64> = (0..n)
                .map(|i| spec.clean_site_waveform(site, i as f64 / fs))
                .collect();
            add_noise(&mut x, fs, &site.noise, &mut rng_for(spec.seed, &format!("contact/{}", site.name)));
            Ok((site.name.clone(), TimeSeries::new(x, fs)?))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    let mut rng = rng_for(spec.seed, "guide");
    let jitter = Uniform::new_inclusive(-spec.guide_jitter_bpm.abs(), spec.guide_jitter_bpm.abs())
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let n_guide = (spec.duration * spec.guide_fs).ceil() as usize + 1;
    let t: Vec<f64> = (0..n_guide).map(|i| i as f64 / spec.guide_fs).collect();
    let bpm = t
        .iter()
        .map(|&t| (spec.hr.rate(t) + jitter.sample(&mut rng)).clamp(30.0, 220.0))
        .collect();
    let guide = GuideRate::new(t, bpm)?;
    let truth = windowed_true_rate(&spec.hr, fs, n, 10.0, 1.0, HR_BAND);
    Ok(ContactRecording { channels, guide, truth })
}

/// Colour-alternating illumination attack: red and green modulated in
/// anti-phase at `freq_bpm` with a linearly ramping depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub freq_bpm: f64,
    pub onset: f64,
    pub duration: f64,
    pub start_amplitude: f64,
    pub end_amplitude: f64,
}

impl AttackSpec {
    pub fn depth(&self, t: f64) -> f64 {
        if t < self.onset || t >= self.onset + self.duration {
            return 0.0;
        }
        let u = (t - self.onset) / self.duration;
        self.start_amplitude + (self.end_amplitude - self.start_amplitude) * u
    }
}

/// Illumination intensity flicker applied equally to every channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flicker {
    pub freq_hz: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RgbOptions {
    /// Relative pulsatile amplitude, in (0, 0.05].
    pub pulse_strength: f64,
    pub baseline: [f64; 3],
    pub direction: [f64; 3],
    pub attack: Option<AttackSpec>,
    pub flicker: Option<Flicker>,
    /// Additive white noise per channel at this pulse-to-noise power ratio.
    pub noise_snr_db: Option<f64>,
}

impl Default for RgbOptions {
    fn default() -> Self {
        Self {
            pulse_strength: 0.005,
            baseline: [170.0, 120.0, 100.0],
            direction: [0.33, 0.77, 0.53],
            attack: None,
            flicker: None,
            noise_snr_db: None,
        }
    }
}

/// Skin-colour trace of one site at the video rate.
pub fn gen_rgb_trace(spec: &SubjectSpec, site: &str, opts: &RgbOptions) -> Result<RgbTrace> {
    spec.validate()?;
    if !(opts.pulse_strength > 0.0 && opts.pulse_strength <= 0.05) {
        return Err(Error::InvalidParameter(format!(
            "pulse strength {} outside (0, 0.05]",
            opts.pulse_strength
        )));
    }
    let site = spec.site(site)?;
    let fs = spec.video_fs;
    let n = (spec.duration * fs).round() as usize;
    let mut channels: [Vec<f64>; 3] = Default::default();
    for (c, out) in channels.iter_mut().enumerate() {
        *out = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                let pulse = spec.pulse(t - site.transit_ms / 1000.0);
                let mut v = opts.baseline[c] * (1.0 + opts.pulse_strength * opts.direction[c] * pulse);
                if let Some(f) = opts.flicker {
                    v *= 1.0 + f.depth * (2.0 * PI * f.freq_hz * t).sin();
                }
                if let Some(a) = opts.attack {
                    let s = a.depth(t) * (2.0 * PI * a.freq_bpm / 60.0 * t).sin();
                    match c {
                        0 => v *= 1.0 + s,
                        1 => v *= 1.0 - s,
                        _ => {}
                    }
                }
                v
            })
            .collect();
        if let Some(snr_db) = opts.noise_snr_db {
            let signal_rms = opts.baseline[c] * opts.pulse_strength * opts.direction[c] * spec.pulse_rms();
            let sigma = signal_rms / 10f64.powf(snr_db / 20.0);
            let mut rng = rng_for(spec.seed, &format!("rgb/{}/{c}", site.name));
            add_noise(out, fs, &[NoiseModel::White { sigma }], &mut rng);
        }
    }
    let [r, g, b] = channels;
    RgbTrace::new(r, g, b, fs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionOptions {
    pub fs: f64,
    /// Columns (of 100) carrying the breathing motion.
    pub signal_columns: Vec<usize>,
    /// Breathing motion amplitude, pixels per frame.
    pub amplitude: f64,
    pub noise_sigma: f64,
}

impl Default for MotionOptions {
    fn default() -> Self {
        Self {
            fs: 30.0,
            signal_columns: (0..5).collect(),
            amplitude: 1.0,
            noise_sigma: 0.1,
        }
    }
}

/// Chest motion matrix plus the true windowed breathing rate (30 s windows,
/// 1 s hop).
pub fn gen_motion_matrix(spec: &SubjectSpec, opts: &MotionOptions) -> Result<(MotionMatrix, RateSeries)> {
    spec.validate()?;
    if let Some(c) = opts.signal_columns.iter().find(|&&c| c >= MotionMatrix::COLUMNS) {
        return Err(Error::InvalidParameter(format!("column {c} out of range")));
    }
    let fs = opts.fs;
    let n = (spec.duration * fs).round() as usize;
    let mut rng = rng_for(spec.seed, "motion");
    let noise = (opts.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, opts.noise_sigma).expect("finite sigma"));
    let mut data = Vec::with_capacity(n * MotionMatrix::COLUMNS);
    for i in 0..n {
        let b = opts.amplitude * spec.breathing(i as f64 / fs);
        for c in 0..MotionMatrix::COLUMNS {
            let mut v = if opts.signal_columns.contains(&c) { b } else { 0.0 };
            if let Some(d) = &noise {
                v += d.sample(&mut rng);
            }
            data.push(v);
        }
    }
    let truth = windowed_true_rate(&spec.resp, fs, n, 30.0, 1.0, RateBand::from_bpm(6.0, 30.0));
    Ok((MotionMatrix::new(data, n, fs)?, truth))
}
