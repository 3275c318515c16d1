use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::TimeSeries;

/// Bandpass edges in Hz plus the order of the lowpass prototype.
///
/// The realized digital filter has `2 * order` poles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassSpec {
    pub low_cut: f64,
    pub high_cut: f64,
    pub order: usize,
}

impl BandpassSpec {
    pub fn new(low_cut: f64, high_cut: f64, order: usize) -> Self {
        Self { low_cut, high_cut, order }
    }

    /// Band given in beats (or breaths) per minute.
    pub fn from_bpm(low_bpm: f64, high_bpm: f64, order: usize) -> Self {
        Self::new(low_bpm / 60.0, high_bpm / 60.0, order)
    }
}

/// One second-order section, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Transposed direct-form II state reached after a unit step settles.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * y;
        let z1 = self.b[1] - self.a[1] * y + z2;
        [z1, z2]
    }
}

/// A cascade of biquads designed for sampling rate `fs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoefficients {
    pub sections: Vec<Biquad>,
    pub fs: f64,
}

impl FilterCoefficients {
    /// Order of the digital filter (number of poles).
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    /// Complex frequency response at `f` Hz.
    pub fn response(&self, f: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f / self.fs);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn magnitude(&self, f: f64) -> f64 {
        self.response(f).norm()
    }

    /// Number of samples of odd reflection added at each end by [`filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * self.order()
    }

    /// Causal filtering from the given initial states.
    fn run(&self, x: &mut [f64], states: &mut [[f64; 2]]) {
        for (sec, z) in self.sections.iter().zip(states.iter_mut()) {
            let [b0, b1, b2] = sec.b;
            let [_, a1, a2] = sec.a;
            let (mut z1, mut z2) = (z[0], z[1]);
            for v in x.iter_mut() {
                let input = *v;
                let y = b0 * input + z1;
                z1 = b1 * input - a1 * y + z2;
                z2 = b2 * input - a2 * y;
                *v = y;
            }
            *z = [z1, z2];
        }
    }

    /// Per-section steady-state step states with the cascade's DC gain
    /// carried through.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [z1, z2] = s.step_state();
                let out = [z1 * scale, z2 * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }
}

/// Digital Butterworth bandpass: analog lowpass prototype, lowpass-to-bandpass
/// transform around pre-warped edges, bilinear transform, grouped into
/// biquads with zeros at z = 1 and z = -1.
pub fn butterworth_bandpass(spec: BandpassSpec, fs: f64) -> Result<FilterCoefficients> {
    let BandpassSpec { low_cut, high_cut, order } = spec;
    let nyquist = fs / 2.0;
    if !(fs > 0.0) || !(low_cut > 0.0) || !(high_cut > low_cut) || !(high_cut < nyquist) {
        return Err(Error::InvalidBand { low: low_cut, high: high_cut, fs });
    }
    if order == 0 {
        return Err(Error::InvalidParameter("filter order must be at least 1".into()));
    }
    let k = 2.0 * fs;
    let w_low = k * (PI * low_cut / fs).tan();
    let w_high = k * (PI * high_cut / fs).tan();
    let bw = w_high - w_low;
    let w0_sq = w_low * w_high;

    let mut poles = Vec::with_capacity(2 * order);
    for i in 0..order {
        let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta) * (bw / 2.0);
        let disc = (p * p - w0_sq).sqrt();
        for s in [p + disc, p - disc] {
            poles.push((k + s) / (k - s));
        }
    }

    // Pair conjugates; real poles (possible for odd orders with wide bands)
    // pair with each other.
    let tol = 1e-12;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > tol).collect();
    let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= tol).map(|p| p.re).collect();
    complex.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    real.sort_by(f64::total_cmp);

    let mut sections: Vec<Biquad> = complex
        .iter()
        .map(|p| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    for pair in real.chunks(2) {
        let (p1, p2) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(p1 + p2), p1 * p2],
        });
    }
    debug_assert_eq!(sections.len(), order);

    // Normalize to unit gain at the geometric centre of the warped band.
    let mut coeffs = FilterCoefficients { sections, fs };
    let center = (w0_sq.sqrt() / k).atan() * fs / PI;
    let gain = coeffs.magnitude(center);
    for b in coeffs.sections[0].b.iter_mut() {
        *b /= gain;
    }
    Ok(coeffs)
}

/// Zero-phase forward-backward filtering of a raw slice.
pub fn filtfilt_slice(coeffs: &FilterCoefficients, x: &[f64]) -> Result<Vec<f64>> {
    let pad = coeffs.pad_len();
    let n = x.len();
    if n <= pad {
        return Err(Error::SignalTooShort { len: n, min: pad });
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = coeffs.step_states();
    let scaled = |x0: f64| zi.iter().map(|z| [z[0] * x0, z[1] * x0]).collect::<Vec<_>>();

    let mut states = scaled(ext[0]);
    coeffs.run(&mut ext, &mut states);
    ext.reverse();
    let mut states = scaled(ext[0]);
    coeffs.run(&mut ext, &mut states);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Zero-phase filtering with odd reflection padding of `3 * order` samples
/// and steady-state initial conditions. The effective magnitude is `|H|^2`.
pub fn filtfilt(coeffs: &FilterCoefficients, ts: &TimeSeries) -> Result<TimeSeries> {
    if (coeffs.fs - ts.fs()).abs() > 1e-9 * ts.fs() {
        return Err(Error::SamplingRateMismatch(format!(
            "filter designed for {} Hz applied to {} Hz",
            coeffs.fs,
            ts.fs()
        )));
    }
    ts.with_samples(filtfilt_slice(coeffs, ts.samples())?)
}
