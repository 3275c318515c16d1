//! Uniformly sampled signal containers and the elementary operations every
//! pipeline shares.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod io;

fn check_fs(fs: f64) -> Result<()> {
    if fs.is_finite() && fs > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidSamplingRate(fs))
    }
}

fn check_finite(samples: &[f64]) -> Result<()> {
    match samples.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// A uniformly sampled scalar signal.
///
/// Samples are guaranteed finite and the sampling rate positive; both are
/// checked once at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    samples: Vec<f64>,
    fs: f64,
    t0: f64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        Self::with_offset(samples, fs, 0.0)
    }

    pub fn with_offset(samples: Vec<f64>, fs: f64, t0: f64) -> Result<Self> {
        check_fs(fs)?;
        if !(t0.is_finite() && t0 >= 0.0) {
            return Err(Error::InvalidOffset(t0));
        }
        check_finite(&samples)?;
        Ok(Self { samples, fs, t0 })
    }

    /// Builds a series by sampling `f` at `t0 + i / fs` for `i in 0..n`.
    pub fn from_fn(n: usize, fs: f64, f: impl FnMut(f64) -> f64) -> Result<Self> {
        check_fs(fs)?;
        let mut f = f;
        let samples = (0..n).map(|i| f(i as f64 / fs)).collect();
        Self::new(samples, fs)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration covered by the samples, `len / fs`.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.t0 + index as f64 / self.fs
    }

    /// Same sampling grid, new values.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::with_offset(samples, self.fs, self.t0)
    }

    /// Contiguous sub-series `[start, start + len)` with the offset adjusted.
    pub fn slice(&self, window: Window) -> Result<Self> {
        if window.end() > self.len() {
            return Err(Error::WidthExceedsLength {
                width: window.end(),
                len: self.len(),
            });
        }
        Ok(Self {
            samples: self.samples[window.start..window.end()].to_vec(),
            fs: self.fs,
            t0: self.time_at(window.start),
        })
    }
}

/// Per-frame spatial-mean RGB values of one region of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbTrace {
    r: Vec<f64>,
    g: Vec<f64>,
    b: Vec<f64>,
    fs: f64,
}

impl RgbTrace {
    pub fn new(r: Vec<f64>, g: Vec<f64>, b: Vec<f64>, fs: f64) -> Result<Self> {
        check_fs(fs)?;
        if r.len() != g.len() || r.len() != b.len() {
            return Err(Error::LengthMismatch(format!(
                "r={}, g={}, b={}",
                r.len(),
                g.len(),
                b.len()
            )));
        }
        check_finite(&r)?;
        check_finite(&g)?;
        check_finite(&b)?;
        Ok(Self { r, g, b, fs })
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn channels(&self) -> [&[f64]; 3] {
        [&self.r, &self.g, &self.b]
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.fs
    }
}

/// Named collection of signals. Iteration order is the lexical order of the
/// site names, so every reduction over channels is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    channels: BTreeMap<String, TimeSeries>,
}

impl ChannelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a channel; site names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, ts: TimeSeries) -> Result<()> {
        let name = name.into();
        if self.channels.contains_key(&name) {
            return Err(Error::InvalidParameter(format!("duplicate site name {name:?}")));
        }
        self.channels.insert(name, ts);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TimeSeries> {
        self.channels.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TimeSeries)> {
        self.channels.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.channels.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Shared sampling rate and minimum length of all channels.
    pub fn common_grid(&self) -> Result<(f64, usize)> {
        let mut iter = self.channels.iter();
        let (first_name, first) = iter
            .next()
            .ok_or_else(|| Error::InsufficientData("empty channel set".into()))?;
        let fs = first.fs();
        let mut len = first.len();
        for (name, ts) in iter {
            if (ts.fs() - fs).abs() > 1e-9 * fs {
                return Err(Error::SamplingRateMismatch(format!(
                    "{first_name} at {fs} Hz vs {name} at {} Hz",
                    ts.fs()
                )));
            }
            len = len.min(ts.len());
        }
        Ok((fs, len))
    }
}

impl FromIterator<(String, TimeSeries)> for ChannelSet {
    fn from_iter<I: IntoIterator<Item = (String, TimeSeries)>>(iter: I) -> Self {
        Self {
            channels: iter.into_iter().collect(),
        }
    }
}

/// Half-open index range `[start_index, start_index + length)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

impl Window {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    /// Index of the centre sample (`start + len / 2`).
    pub fn center(&self) -> usize {
        self.start + self.len / 2
    }
}

/// Population mean and standard deviation (divisor N).
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Z-normalizes a slice in place of a copy; `None` when the variance is zero.
pub(crate) fn znormalize_slice(x: &[f64]) -> Option<Vec<f64>> {
    let (mu, sd) = mean_std(x);
    if !(sd > 0.0) || sd <= 1e-300 {
        return None;
    }
    Some(x.iter().map(|v| (v - mu) / sd).collect())
}

/// `(x - mean) / std` with the population standard deviation.
pub fn znormalize(ts: &TimeSeries) -> Result<TimeSeries> {
    if ts.len() < 2 {
        return Err(Error::SampleTooSmall {
            required: 2,
            actual: ts.len(),
        });
    }
    let samples = znormalize_slice(ts.samples())
        .ok_or_else(|| Error::ZeroVariance("znormalize input".into()))?;
    ts.with_samples(samples)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Linear,
    /// Catmull-Rom cubic through the four surrounding samples.
    Cubic,
}

/// Linear resampling onto a grid at `new_fs` covering the same time span.
pub fn resample_linear(ts: &TimeSeries, new_fs: f64) -> Result<TimeSeries> {
    resample(ts, new_fs, Interpolation::Linear)
}

/// Resamples onto `t0 + k / new_fs` for every `k` whose time falls within the
/// span of the input samples.
pub fn resample(ts: &TimeSeries, new_fs: f64, mode: Interpolation) -> Result<TimeSeries> {
    check_fs(new_fs)?;
    let x = ts.samples();
    if x.is_empty() {
        return Err(Error::EmptySignal);
    }
    if (new_fs - ts.fs()).abs() <= f64::EPSILON * ts.fs() {
        return Ok(ts.clone());
    }
    let n = x.len();
    let span = (n - 1) as f64 / ts.fs();
    let n_out = (span * new_fs + 1e-9).floor() as usize + 1;
    let ratio = ts.fs() / new_fs;
    let at = |i: isize| x[i.clamp(0, n as isize - 1) as usize];
    let out = (0..n_out)
        .map(|k| {
            let pos = k as f64 * ratio;
            let i = (pos.floor() as usize).min(n - 1);
            let frac = pos - i as f64;
            if frac <= 0.0 || i + 1 >= n {
                return x[i];
            }
            match mode {
                Interpolation::Linear => x[i] + frac * (x[i + 1] - x[i]),
                Interpolation::Cubic => {
                    let i = i as isize;
                    let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
                    let t = frac;
                    0.5 * (2.0 * p1
                        + (-p0 + p2) * t
                        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
                        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
                }
            }
        })
        .collect();
    TimeSeries::with_offset(out, new_fs, ts.t0())
}

/// All windows of `width` samples at the given stride, ordered by start.
pub fn sliding_windows(len: usize, width: usize, stride: usize) -> Result<Vec<Window>> {
    if width == 0 || stride == 0 {
        return Err(Error::InvalidParameter("window width and stride must be at least 1".into()));
    }
    if width > len {
        return Err(Error::WidthExceedsLength { width, len });
    }
    let count = (len - width) / stride + 1;
    Ok((0..count)
        .map(|i| Window {
            start: i * stride,
            len: width,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn znormalize_small_ramp() {
        let ts = TimeSeries::new(vec![1.0, 2.0, 3.0], 1.0).unwrap();
        let z = znormalize(&ts).unwrap();
        // sigma = sqrt(2/3)
        let s = (2.0f64 / 3.0).sqrt();
        let expected = [-1.0 / s, 0.0, 1.0 / s];
        for (a, b) in z.samples().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((z.samples()[2] - 1.224_744_871_391_589).abs() < 1e-12);
    }

    #[test]
    fn znormalize_constant_fails() {
        let ts = TimeSeries::new(vec![5.0; 3], 1.0).unwrap();
        assert!(matches!(znormalize(&ts), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn rejects_non_finite() {
        assert_eq!(
            TimeSeries::new(vec![0.0, f64::NAN], 1.0),
            Err(Error::NonFinite { index: 1 })
        );
        assert!(TimeSeries::new(vec![0.0], 0.0).is_err());
        assert!(RgbTrace::new(vec![1.0], vec![1.0, 2.0], vec![1.0], 30.0).is_err());
    }

    #[test]
    fn resample_identity_and_ramp() {
        let ts = TimeSeries::new(vec![0.0, 1.0, 2.0, 3.0], 1.0).unwrap();
        assert_eq!(resample_linear(&ts, 1.0).unwrap(), ts);
        let up = resample_linear(&ts, 2.0).unwrap();
        assert_eq!(up.samples(), &[0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
        assert_eq!(up.fs(), 2.0);
    }

    #[test]
    fn resample_sine_400_to_90() {
        let fs = 400.0;
        let ts = TimeSeries::from_fn(4000, fs, |t| (2.0 * std::f64::consts::PI * t).sin()).unwrap();
        let out = resample_linear(&ts, 90.0).unwrap();
        let max_err = out
            .samples()
            .iter()
            .enumerate()
            .map(|(k, v)| (v - (2.0 * std::f64::consts::PI * k as f64 / 90.0).sin()).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-3, "max err {max_err}");
        assert!((out.duration() - ts.duration()).abs() <= 1.0 / 90.0 + 1.0 / 400.0);
    }

    #[test]
    fn cubic_beats_linear_on_sine() {
        let ts = TimeSeries::from_fn(400, 40.0, |t| (2.0 * std::f64::consts::PI * 1.3 * t).sin()).unwrap();
        let err = |mode| {
            let out = resample(&ts, 97.0, mode).unwrap();
            out.samples()
                .iter()
                .enumerate()
                .skip(2)
                .take(out.len() - 4)
                .map(|(k, v)| (v - (2.0 * std::f64::consts::PI * 1.3 * k as f64 / 97.0).sin()).abs())
                .fold(0.0, f64::max)
        };
        assert!(err(Interpolation::Cubic) < err(Interpolation::Linear));
    }

    #[test]
    fn window_counts() {
        assert_eq!(sliding_windows(10, 10, 1).unwrap().len(), 1);
        let w = sliding_windows(12, 10, 1).unwrap();
        assert_eq!(w.iter().map(|w| w.start).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(sliding_windows(4000, 2000, 4).unwrap().len(), 501);
        assert!(matches!(
            sliding_windows(5, 10, 1),
            Err(Error::WidthExceedsLength { .. })
        ));
    }

    #[test]
    fn channel_set_rejects_duplicates() {
        let mut set = ChannelSet::new();
        let ts = TimeSeries::new(vec![1.0, 2.0], 10.0).unwrap();
        set.insert("a", ts.clone()).unwrap();
        assert!(set.insert("a", ts).is_err());
    }

    proptest! {
        #[test]
        fn znormalize_idempotent(xs in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let ts = TimeSeries::new(xs, 10.0).unwrap();
            if let Ok(z1) = znormalize(&ts) {
                let z2 = znormalize(&z1).unwrap();
                for (a, b) in z1.samples().iter().zip(z2.samples()) {
                    prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()) * 10.0);
                }
            }
        }

        #[test]
        fn window_count_formula(len in 1usize..5000, width in 1usize..5000, stride in 1usize..100) {
            match sliding_windows(len, width, stride) {
                Ok(w) => {
                    prop_assert!(width <= len);
                    prop_assert_eq!(w.len(), (len - width) / stride + 1);
                    prop_assert!(w.windows(2).all(|p| p[0].start < p[1].start));
                    prop_assert!(w.last().unwrap().end() <= len);
                }
                Err(_) => prop_assert!(width > len),
            }
        }

        #[test]
        fn resample_round_trip_linear(slope in -5.0f64..5.0, offset in -10.0f64..10.0, n in 3usize..200) {
            let ts = TimeSeries::from_fn(n, 7.0, |t| offset + slope * t).unwrap();
            let up = resample_linear(&ts, 14.0).unwrap();
            let back = resample_linear(&up, 7.0).unwrap();
            prop_assert_eq!(back.len(), ts.len());
            for (a, b) in back.samples().iter().zip(ts.samples()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
