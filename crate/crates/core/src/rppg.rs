//! Pulse extraction from RGB skin traces with CHROM and POS.
//!
//! Both methods normalize every channel by its temporal mean inside a short
//! window, project onto a fixed chrominance plane and combine the two
//! projections with a standard-deviation ratio. CHROM uses Hann-weighted
//! windows at 50% overlap; POS slides its window one frame at a time and
//! accumulates the mean-removed projections.

use serde::{Deserialize, Serialize};

use crate::dsp::{butterworth_bandpass, filtfilt_slice, BandpassSpec};
use crate::error::{Error, Result};
use crate::signal::{mean_std, RgbTrace, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Chrom,
    Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RppgConfig {
    pub method: Method,
    /// Projection window, seconds.
    pub window_len: f64,
    /// Post-filter; `None` returns the raw overlap-added projection.
    pub bandpass: Option<BandpassSpec>,
}

impl Default for RppgConfig {
    fn default() -> Self {
        Self {
            method: Method::Pos,
            window_len: 1.6,
            bandpass: Some(BandpassSpec::from_bpm(40.0, 180.0, 4)),
        }
    }
}

impl RppgConfig {
    pub fn chrom() -> Self {
        Self {
            method: Method::Chrom,
            ..Self::default()
        }
    }

    pub fn pos() -> Self {
        Self::default()
    }

    fn window_frames(&self, fs: f64) -> Result<usize> {
        let l = (self.window_len * fs).round() as usize;
        if l < 8 {
            return Err(Error::InvalidParameter(format!(
                "projection window of {l} frames; need at least 8"
            )));
        }
        Ok(l)
    }
}

/// Standard deviations below this are treated as zero; normalized channels
/// hover around 1, so this is far below any physical pulse.
const SIGMA_FLOOR: f64 = 1e-13;

/// Channels of `trace[start..start + len]` divided by their window means.
fn normalized_window(trace: &RgbTrace, start: usize, len: usize) -> Result<[Vec<f64>; 3]> {
    let mut out: [Vec<f64>; 3] = Default::default();
    for (dst, src) in out.iter_mut().zip(trace.channels()) {
        let seg = &src[start..start + len];
        let mean = seg.iter().sum::<f64>() / len as f64;
        if mean == 0.0 {
            return Err(Error::DegenerateWindow {
                start,
                reason: "channel mean is zero",
            });
        }
        *dst = seg.iter().map(|v| v / mean).collect();
    }
    Ok(out)
}

/// `a + ratio * b` with `ratio = sign * σ(a) / σ(b)`, mean removed.
fn combine(a: &[f64], b: &[f64], sign: f64, start: usize) -> Result<Vec<f64>> {
    let (_, sa) = mean_std(a);
    let (_, sb) = mean_std(b);
    if sb <= SIGMA_FLOOR {
        return Err(Error::DegenerateWindow {
            start,
            reason: "second projection has zero variance",
        });
    }
    let alpha = sign * sa / sb;
    let mut h: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + alpha * y).collect();
    let (m, _) = mean_std(&h);
    h.iter_mut().for_each(|v| *v -= m);
    Ok(h)
}

fn chrom_raw(trace: &RgbTrace, l: usize) -> Result<Vec<f64>> {
    let n = trace.len();
    // Even window so that 50% overlap of periodic Hann windows sums to one.
    let l = l + l % 2;
    if n < l {
        return Err(Error::TooShort {
            duration: trace.duration(),
            required: l as f64 / trace.fs(),
        });
    }
    let hop = l / 2;
    let hann: Vec<f64> = (0..l)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / l as f64).cos())
        .collect();
    let mut starts: Vec<usize> = (0..=n - l).step_by(hop).collect();
    if *starts.last().unwrap() != n - l {
        starts.push(n - l);
    }
    let mut out = vec![0.0; n];
    for &s in &starts {
        let [r, g, b] = normalized_window(trace, s, l)?;
        let x: Vec<f64> = r.iter().zip(&g).map(|(r, g)| 3.0 * r - 2.0 * g).collect();
        let y: Vec<f64> = r
            .iter()
            .zip(&g)
            .zip(&b)
            .map(|((r, g), b)| 1.5 * r + g - 1.5 * b)
            .collect();
        let sig = combine(&x, &y, -1.0, s)?;
        for (i, v) in sig.iter().enumerate() {
            out[s + i] += hann[i] * v;
        }
    }
    Ok(out)
}

fn pos_raw(trace: &RgbTrace, l: usize) -> Result<Vec<f64>> {
    let n = trace.len();
    if n < l {
        return Err(Error::TooShort {
            duration: trace.duration(),
            required: l as f64 / trace.fs(),
        });
    }
    let mut out = vec![0.0; n];
    for s in 0..=n - l {
        let [r, g, b] = normalized_window(trace, s, l)?;
        let s1: Vec<f64> = g.iter().zip(&b).map(|(g, b)| g - b).collect();
        let s2: Vec<f64> = r
            .iter()
            .zip(&g)
            .zip(&b)
            .map(|((r, g), b)| g + b - 2.0 * r)
            .collect();
        let h = combine(&s1, &s2, 1.0, s)?;
        for (i, v) in h.iter().enumerate() {
            out[s + i] += v;
        }
    }
    Ok(out)
}

fn post_filter(raw: Vec<f64>, cfg: &RppgConfig, fs: f64) -> Result<TimeSeries> {
    let samples = match cfg.bandpass {
        Some(spec) => filtfilt_slice(&butterworth_bandpass(spec, fs)?, &raw)?,
        None => raw,
    };
    TimeSeries::new(samples, fs)
}

/// CHROM: `X = 3Rn − 2Gn`, `Y = 1.5Rn + Gn − 1.5Bn`, `S = X − (σX/σY)·Y`.
pub fn chrom(trace: &RgbTrace, cfg: &RppgConfig) -> Result<TimeSeries> {
    let raw = chrom_raw(trace, cfg.window_frames(trace.fs())?)?;
    post_filter(raw, cfg, trace.fs())
}

/// POS: `S1 = Gn − Bn`, `S2 = Gn + Bn − 2Rn`, `h = S1 + (σS1/σS2)·S2`.
pub fn pos(trace: &RgbTrace, cfg: &RppgConfig) -> Result<TimeSeries> {
    let raw = pos_raw(trace, cfg.window_frames(trace.fs())?)?;
    post_filter(raw, cfg, trace.fs())
}

/// Dispatches on `cfg.method`.
pub fn extract(trace: &RgbTrace, cfg: &RppgConfig) -> Result<TimeSeries> {
    match cfg.method {
        Method::Chrom => chrom(trace, cfg),
        Method::Pos => pos(trace, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_trace(n: usize) -> RgbTrace {
        RgbTrace::new(vec![170.0; n], vec![120.0; n], vec![100.0; n], 30.0).unwrap()
    }

    #[test]
    fn constant_colour_is_degenerate() {
        let trace = constant_trace(300);
        for cfg in [RppgConfig::chrom(), RppgConfig::pos()] {
            assert!(matches!(extract(&trace, &cfg), Err(Error::DegenerateWindow { .. })));
        }
    }

    #[test]
    fn zero_channel_is_degenerate() {
        let n = 300;
        let trace = RgbTrace::new(
            (0..n).map(|i| 100.0 + (i as f64).sin()).collect(),
            vec![0.0; n],
            (0..n).map(|i| 90.0 + (i as f64).cos()).collect(),
            30.0,
        )
        .unwrap();
        let err = pos(&trace, &RppgConfig::pos()).unwrap_err();
        assert!(matches!(err, Error::DegenerateWindow { reason: "channel mean is zero", .. }));
    }

    #[test]
    fn short_window_rejected() {
        let cfg = RppgConfig {
            window_len: 0.2,
            ..RppgConfig::pos()
        };
        assert!(pos(&constant_trace(300), &cfg).is_err());
        assert!(matches!(
            pos(&constant_trace(20), &RppgConfig::pos()),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn output_length_matches_input() {
        let n = 1001;
        let trace = RgbTrace::new(
            (0..n).map(|i| 170.0 + (i as f64 * 0.25).sin()).collect(),
            (0..n).map(|i| 120.0 + (i as f64 * 0.25).sin() * 2.0).collect(),
            (0..n).map(|i| 100.0 + (i as f64 * 0.31).cos()).collect(),
            30.0,
        )
        .unwrap();
        for cfg in [RppgConfig::chrom(), RppgConfig::pos()] {
            assert_eq!(extract(&trace, &cfg).unwrap().len(), n);
        }
    }
}
