use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::signal::TimeSeries;

/// FFT-based analytic signal: negative frequencies zeroed, positive doubled.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward.process(&mut buf);
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *v *= h / n as f64;
    }
    inverse.process(&mut buf);
    buf
}

pub fn hilbert_envelope_slice(x: &[f64]) -> Vec<f64> {
    analytic_signal(x).into_iter().map(|z| z.norm()).collect()
}

/// Instantaneous amplitude `|x + i H{x}|`.
pub fn hilbert_envelope(ts: &TimeSeries) -> TimeSeries {
    ts.with_samples(hilbert_envelope_slice(ts.samples()))
        .expect("envelope of finite samples is finite")
}
