//! Numerical kernels shared by every pipeline.

mod butterworth;
mod hilbert;
mod spectral;

pub use butterworth::{butterworth_bandpass, filtfilt, filtfilt_slice, BandpassSpec, Biquad, FilterCoefficients};
pub use hilbert::{analytic_signal, hilbert_envelope, hilbert_envelope_slice};
pub use spectral::{
    band_snr, estimate_hr_series, estimate_rate_series, padded_fft_len, HrSeries, RateBand,
    RateSeries, FREQUENCY_RESOLUTION_HZ, HR_BAND,
};

/// Converts beats (or breaths) per minute to Hz.
pub fn bpm_to_hz(bpm: f64) -> f64 {
    bpm / 60.0
}

pub fn hz_to_bpm(hz: f64) -> f64 {
    hz * 60.0
}
