//! Guide-rate windowed fusion of many contact-PPG channels into one global
//! pulse waveform.
//!
//! For every window of `cfg.window` seconds (stride `cfg.stride` samples)
//! each channel segment is z-normalized, bandpassed around the guide rate at
//! the window centre (`Y ± ΔY`), and the channels are summed. The window's
//! centre sample is emitted, and the assembled waveform is finally divided by
//! its Hilbert envelope.
//!
//! [`fuse`] evaluates this in chunks: windows whose quantized guide rate
//! agrees share one filter pass over the union of their segments,
//! and z-normalization is applied after filtering using rolling window
//! statistics (filtering is linear and the bandpass removes the mean). Edge
//! transients of a window are at least half a window away from its centre,
//! which is where the two evaluations could differ. [`fuse_exact`] is the
//! literal per-window evaluation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, butterworth_bandpass, filtfilt_slice, BandpassSpec, HrSeries};
use crate::error::{Error, Result};
use crate::signal::{ChannelSet, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Window length, seconds.
    pub window: f64,
    /// Window stride, samples.
    pub stride: usize,
    /// Half-width of the bandpass around the guide rate, bpm.
    pub delta_bpm: f64,
    /// Butterworth prototype order.
    pub filter_order: usize,
    /// Envelope floor as a fraction of the peak combined amplitude.
    pub envelope_epsilon: f64,
    /// Guide rates are rounded to this step before designing filters, bpm.
    /// Zero designs one filter per distinct guide value.
    pub rate_quantum_bpm: f64,
    /// Largest tolerated distance to the nearest guide sample, seconds.
    pub guide_max_gap: f64,
    /// STFT window and hop used by [`fused_hr`], seconds.
    pub hr_window: f64,
    pub hr_hop: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            window: 10.0,
            stride: 1,
            delta_bpm: 30.0,
            filter_order: 2,
            envelope_epsilon: 1e-6,
            rate_quantum_bpm: 1.0,
            guide_max_gap: 1.0,
            hr_window: 10.0,
            hr_hop: 1.0,
        }
    }
}

/// Reference pulse rate from the fingertip oximeter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideRate {
    pub t: Vec<f64>,
    pub bpm: Vec<f64>,
}

impl GuideRate {
    pub fn new(t: Vec<f64>, bpm: Vec<f64>) -> Result<Self> {
        if t.is_empty() || t.len() != bpm.len() {
            return Err(Error::LengthMismatch(format!("guide t={}, bpm={}", t.len(), bpm.len())));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("guide times must be strictly increasing".into()));
        }
        if let Some(v) = bpm.iter().find(|v| !(30.0..=220.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!("guide rate {v} bpm outside [30, 220]")));
        }
        Ok(Self { t, bpm })
    }

    /// Constant guide sampled at `fs` over `[0, duration]`.
    pub fn constant(bpm: f64, duration: f64, fs: f64) -> Result<Self> {
        let n = (duration * fs).ceil() as usize + 1;
        Self::new((0..n).map(|i| i as f64 / fs).collect(), vec![bpm; n])
    }

    /// Nearest-sample lookup.
    pub fn at(&self, t: f64, max_gap: f64) -> Result<f64> {
        let i = self.t.partition_point(|&x| x < t);
        let candidates = [i.checked_sub(1), (i < self.t.len()).then_some(i)];
        let nearest = candidates
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (self.t[a] - t).abs().total_cmp(&(self.t[b] - t).abs()))
            .expect("guide is non-empty");
        if (self.t[nearest] - t).abs() > max_gap {
            return Err(Error::GuideGap(t));
        }
        Ok(self.bpm[nearest])
    }
}

struct Plan {
    fs: f64,
    len: usize,
    width: usize,
    half: usize,
    starts: Vec<usize>,
    /// Quantized guide rate per window.
    rates: Vec<f64>,
    t0: f64,
}

fn plan(channels: &ChannelSet, guide: &GuideRate, cfg: &FusionConfig) -> Result<Plan> {
    if cfg.stride == 0 || !(cfg.window > 0.0) || !(cfg.delta_bpm > 0.0) {
        return Err(Error::InvalidParameter("fusion window, stride and delta must be positive".into()));
    }
    let (fs, len) = channels.common_grid()?;
    let width = (cfg.window * fs).round() as usize;
    if width < 2 || width > len {
        return Err(Error::TooShort {
            duration: len as f64 / fs,
            required: cfg.window,
        });
    }
    let t0 = channels.iter().next().map(|(_, ts)| ts.t0()).unwrap_or(0.0);
    let half = width / 2;
    let starts: Vec<usize> = (0..=len - width).step_by(cfg.stride).collect();
    let rates = starts
        .iter()
        .map(|&s| {
            let y = guide.at(t0 + (s + half) as f64 / fs, cfg.guide_max_gap)?;
            Ok(if cfg.rate_quantum_bpm > 0.0 {
                (y / cfg.rate_quantum_bpm).round() * cfg.rate_quantum_bpm
            } else {
                y
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Plan {
        fs,
        len,
        width,
        half,
        starts,
        rates,
        t0,
    })
}

fn band_for(rate_bpm: f64, cfg: &FusionConfig, fs: f64) -> BandpassSpec {
    let low = ((rate_bpm - cfg.delta_bpm) / 60.0).max(0.1);
    let high = ((rate_bpm + cfg.delta_bpm) / 60.0).min(0.99 * fs / 2.0);
    BandpassSpec::new(low, high, cfg.filter_order)
}

/// Rolling population variance over windows of `width` samples.
struct RollingStats {
    s1: Vec<f64>,
    s2: Vec<f64>,
    floor: f64,
}

impl RollingStats {
    fn new(x: &[f64]) -> Self {
        let (mean, sd) = crate::signal::mean_std(x);
        let mut s1 = Vec::with_capacity(x.len() + 1);
        let mut s2 = Vec::with_capacity(x.len() + 1);
        let (mut a, mut b) = (0.0, 0.0);
        s1.push(0.0);
        s2.push(0.0);
        for v in x {
            let d = v - mean;
            a += d;
            b += d * d;
            s1.push(a);
            s2.push(b);
        }
        Self {
            s1,
            s2,
            floor: 1e-12 * sd * sd,
        }
    }

    /// Standard deviation of `[start, start + width)`, `None` for a dead window.
    fn std(&self, start: usize, width: usize) -> Option<f64> {
        let w = width as f64;
        let m = (self.s1[start + width] - self.s1[start]) / w;
        let var = (self.s2[start + width] - self.s2[start]) / w - m * m;
        (var > self.floor && var > 0.0).then(|| var.sqrt())
    }
}

/// Normalized, filtered centre samples of one channel for every window;
/// `None` marks a window where the channel is flat.
fn channel_centres(x: &[f64], plan: &Plan, cfg: &FusionConfig) -> Result<Vec<Option<f64>>> {
    let stats = RollingStats::new(&x[..plan.len]);
    let mut out = vec![None; plan.starts.len()];
    // Windows sharing a rate are filtered together over the union of their
    // segments, even when other rates interleave (a jittery guide).
    let mut by_rate: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, r) in plan.rates.iter().enumerate() {
        by_rate.entry(r.to_bits()).or_default().push(i);
    }
    for (bits, windows) in by_rate {
        let filter = butterworth_bandpass(band_for(f64::from_bits(bits), cfg, plan.fs), plan.fs)?;
        let mut k = 0;
        while k < windows.len() {
            let seg_start = plan.starts[windows[k]];
            let mut seg_end = seg_start + plan.width;
            let mut m = k + 1;
            while m < windows.len() && plan.starts[windows[m]] <= seg_end {
                seg_end = plan.starts[windows[m]] + plan.width;
                m += 1;
            }
            let filtered = filtfilt_slice(&filter, &x[seg_start..seg_end])?;
            for &i in &windows[k..m] {
                let s = plan.starts[i];
                out[i] = stats
                    .std(s, plan.width)
                    .map(|sd| filtered[s + plan.half - seg_start] / sd);
            }
            k = m;
        }
    }
    Ok(out)
}

fn assemble(per_channel: Vec<Vec<Option<f64>>>, plan: &Plan, cfg: &FusionConfig) -> Result<TimeSeries> {
    let mut combined = vec![0.0; plan.starts.len()];
    let mut alive = false;
    for channel in &per_channel {
        for (acc, v) in combined.iter_mut().zip(channel) {
            if let Some(v) = v {
                *acc += v;
                alive = true;
            }
        }
    }
    let peak = combined.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !alive || peak == 0.0 {
        return Err(Error::AllChannelsDead);
    }
    let floor = cfg.envelope_epsilon * peak;
    let envelope = dsp::hilbert_envelope_slice(&combined);
    let samples = combined
        .iter()
        .zip(&envelope)
        .map(|(c, e)| c / e.max(floor))
        .collect();
    let stride = plan.starts.get(1).map_or(1, |s| s - plan.starts[0]).max(1);
    TimeSeries::with_offset(
        samples,
        plan.fs / stride as f64,
        plan.t0 + plan.half as f64 / plan.fs,
    )
}

/// Fuses all channels into one unit-amplitude pulse waveform.
///
/// The output holds one sample per window: its first sample sits at the
/// centre of the first window (`t0 + width/2 / fs`) and the rate is
/// `fs / stride`.
pub fn fuse(channels: &ChannelSet, guide: &GuideRate, cfg: &FusionConfig) -> Result<TimeSeries> {
    let plan = plan(channels, guide, cfg)?;
    let inputs: Vec<&[f64]> = channels.iter().map(|(_, ts)| ts.samples()).collect();
    let per_channel = inputs
        .par_iter()
        .map(|x| channel_centres(x, &plan, cfg))
        .collect::<Result<Vec<_>>>()?;
    assemble(per_channel, &plan, cfg)
}

/// Literal per-window evaluation: every window segment is z-normalized and
/// filtered on its own. O(N·W); intended for verification on short records.
pub fn fuse_exact(channels: &ChannelSet, guide: &GuideRate, cfg: &FusionConfig) -> Result<TimeSeries> {
    let plan = plan(channels, guide, cfg)?;
    let per_channel = channels
        .iter()
        .map(|(_, ts)| {
            let x = ts.samples();
            plan.starts
                .iter()
                .zip(&plan.rates)
                .map(|(&s, &rate)| {
                    let Some(z) = crate::signal::znormalize_slice(&x[s..s + plan.width]) else {
                        return Ok(None);
                    };
                    let filter = butterworth_bandpass(band_for(rate, cfg, plan.fs), plan.fs)?;
                    Ok(Some(filtfilt_slice(&filter, &z)?[plan.half]))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(per_channel, &plan, cfg)
}

/// Windowed pulse rate of the fused waveform.
pub fn fused_hr(channels: &ChannelSet, guide: &GuideRate, cfg: &FusionConfig) -> Result<HrSeries> {
    let fused = fuse(channels, guide, cfg)?;
    dsp::estimate_hr_series(&fused, cfg.hr_window, cfg.hr_hop)
}
