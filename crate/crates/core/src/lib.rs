//! Signal processing for multi-site vital-sign estimation.
//!
//! The crate covers the full chain from raw traces to reported metrics:
//!
//! * [`signal`]: time-series containers, normalization, resampling, windowing and CSV I/O.
//! * [`dsp`]: Butterworth design, zero-phase filtering, Hilbert envelope, STFT rate estimation.
//! * [`rppg`]: CHROM and POS pulse extraction from RGB traces.
//! * [`fusion`]: guide-rate windowed fusion of many contact-PPG channels.
//! * [`ptt`]: pulse transit time by sliding normalized cross-correlation.
//! * [`respiration`]: respiration from contact PPG and from chest motion (ZCA).
//! * [`stats`]: error metrics and the hypothesis-test battery.
//! * [`synth`]: deterministic synthetic multi-site subjects used as test oracles.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsp;
pub mod error;
pub mod fusion;
pub mod ptt;
pub mod respiration;
pub mod rppg;
pub mod signal;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use signal::{ChannelSet, RgbTrace, TimeSeries, Window};
