use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::TimeSeries;

/// Target spacing of the zero-padded frequency grid.
pub const FREQUENCY_RESOLUTION_HZ: f64 = 0.001;

/// Pulse search band, 40 to 180 bpm.
pub const HR_BAND: RateBand = RateBand {
    low_hz: 0.66,
    high_hz: 3.0,
};

/// In-band peaks smaller than this fraction of the strongest spectral
/// magnitude anywhere (DC excluded) are marked low-confidence.
const CONFIDENCE_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBand {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl RateBand {
    pub fn from_bpm(low: f64, high: f64) -> Self {
        Self {
            low_hz: low / 60.0,
            high_hz: high / 60.0,
        }
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.low_hz && f <= self.high_hz
    }
}

/// Windowed rate estimates in events per minute (beats or breaths).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    /// Window centres, seconds.
    pub centers: Vec<f64>,
    /// Rate per window, per minute.
    pub rate: Vec<f64>,
    /// False where the in-band peak sits on a band edge or is dwarfed by
    /// out-of-band energy.
    pub confident: Vec<bool>,
    pub window: f64,
    pub hop: f64,
    pub band: RateBand,
}

pub type HrSeries = RateSeries;

impl RateSeries {
    pub fn len(&self) -> usize {
        self.rate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rate.is_empty()
    }

    /// Mean of the confident estimates, `None` when none are confident.
    pub fn mean_confident(&self) -> Option<f64> {
        let (sum, n) = self
            .rate
            .iter()
            .zip(&self.confident)
            .filter(|(_, &c)| c)
            .fold((0.0, 0usize), |(s, n), (r, _)| (s + r, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Smallest power of two giving a bin spacing of at most
/// [`FREQUENCY_RESOLUTION_HZ`] at `fs`, never shorter than `min_len`.
pub fn padded_fft_len(fs: f64, min_len: usize) -> usize {
    let target = (fs / FREQUENCY_RESOLUTION_HZ).ceil() as usize;
    target.max(min_len).next_power_of_two()
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

struct PeakPicker {
    fft: Arc<dyn Fft<f64>>,
    taper: Vec<f64>,
    nfft: usize,
    fs: f64,
    lo_bin: usize,
    hi_bin: usize,
}

impl PeakPicker {
    fn new(width: usize, fs: f64, band: RateBand) -> Result<Self> {
        let nfft = padded_fft_len(fs, width);
        let df = fs / nfft as f64;
        let lo_bin = (band.low_hz / df).ceil() as usize;
        let hi_bin = ((band.high_hz / df).floor() as usize).min(nfft / 2);
        if lo_bin == 0 || lo_bin > hi_bin {
            return Err(Error::InvalidBand {
                low: band.low_hz,
                high: band.high_hz,
                fs,
            });
        }
        Ok(Self {
            fft: FftPlanner::new().plan_fft_forward(nfft),
            taper: hann(width),
            nfft,
            fs,
            lo_bin,
            hi_bin,
        })
    }

    /// Returns (peak frequency in Hz, confident).
    fn pick(&self, segment: &[f64], buf: &mut Vec<Complex64>, scratch: &mut Vec<Complex64>) -> (f64, bool) {
        let mean = segment.iter().sum::<f64>() / segment.len() as f64;
        buf.clear();
        buf.extend(
            segment
                .iter()
                .zip(&self.taper)
                .map(|(v, w)| Complex64::new((v - mean) * w, 0.0)),
        );
        buf.resize(self.nfft, Complex64::new(0.0, 0.0));
        scratch.resize(self.fft.get_inplace_scratch_len(), Complex64::new(0.0, 0.0));
        self.fft.process_with_scratch(buf, scratch);

        let mut best = self.lo_bin;
        let mut best_power = buf[best].norm_sqr();
        for k in self.lo_bin + 1..=self.hi_bin {
            let p = buf[k].norm_sqr();
            if p > best_power {
                best = k;
                best_power = p;
            }
        }
        let global = buf[1..=self.nfft / 2]
            .iter()
            .map(|c| c.norm_sqr())
            .fold(0.0, f64::max);
        let on_edge = best == self.lo_bin || best == self.hi_bin;
        let confident =
            !on_edge && best_power > 0.0 && best_power >= CONFIDENCE_RATIO * CONFIDENCE_RATIO * global;
        (best as f64 * self.fs / self.nfft as f64, confident)
    }
}

/// Sliding Hann-windowed spectral peak search restricted to `band`.
///
/// Each window is mean-removed, tapered and zero-padded to
/// [`padded_fft_len`]; the reported rate is 60 times the frequency of the
/// largest in-band bin (lowest frequency on exact ties).
pub fn estimate_rate_series(ts: &TimeSeries, band: RateBand, window: f64, hop: f64) -> Result<RateSeries> {
    if !(window > 0.0) || !(hop > 0.0) {
        return Err(Error::InvalidParameter("window and hop must be positive".into()));
    }
    let fs = ts.fs();
    let width = (window * fs).round() as usize;
    if width < 2 || width > ts.len() {
        return Err(Error::TooShort {
            duration: ts.duration(),
            required: window,
        });
    }
    let hop_n = ((hop * fs).round() as usize).max(1);
    let picker = PeakPicker::new(width, fs, band)?;
    let x = ts.samples();
    let starts: Vec<usize> = (0..=(x.len() - width)).step_by(hop_n).collect();
    let peaks: Vec<(f64, bool)> = starts
        .par_iter()
        .map_init(
            || (Vec::with_capacity(picker.nfft), Vec::new()),
            |(buf, scratch), &s| picker.pick(&x[s..s + width], buf, scratch),
        )
        .collect();
    Ok(RateSeries {
        centers: starts
            .iter()
            .map(|&s| ts.t0() + (s as f64 + width as f64 / 2.0) / fs)
            .collect(),
        rate: peaks.iter().map(|p| p.0 * 60.0).collect(),
        confident: peaks.iter().map(|p| p.1).collect(),
        window: width as f64 / fs,
        hop: hop_n as f64 / fs,
        band,
    })
}

/// Pulse rate per window over 40 to 180 bpm.
pub fn estimate_hr_series(ts: &TimeSeries, window: f64, hop: f64) -> Result<HrSeries> {
    estimate_rate_series(ts, HR_BAND, window, hop)
}

/// Ratio of spectral power inside `band` to power outside it, DC excluded,
/// from a Hann-tapered periodogram of the whole series.
pub fn band_snr(ts: &TimeSeries, band: RateBand) -> Result<f64> {
    if ts.duration() < 10.0 {
        return Err(Error::TooShort {
            duration: ts.duration(),
            required: 10.0,
        });
    }
    let x = ts.samples();
    let n = x.len();
    let nfft = n.next_power_of_two();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = x
        .iter()
        .zip(hann(n))
        .map(|(v, w)| Complex64::new((v - mean) * w, 0.0))
        .collect();
    buf.resize(nfft, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let df = ts.fs() / nfft as f64;
    let (mut inside, mut outside) = (0.0, 0.0);
    for (k, c) in buf.iter().enumerate().take(nfft / 2 + 1).skip(1) {
        if band.contains(k as f64 * df) {
            inside += c.norm_sqr();
        } else {
            outside += c.norm_sqr();
        }
    }
    Ok(if outside > 0.0 { inside / outside } else if inside > 0.0 { f64::INFINITY } else { 0.0 })
}
