//! Respiration from contact PPG and from chest motion.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dsp::{self, butterworth_bandpass, filtfilt_slice, BandpassSpec, RateBand, RateSeries};
use crate::error::{Error, Result};
use crate::signal::{znormalize_slice, ChannelSet, TimeSeries};

/// Per-frame vertical motion of a 10×10 grid of chest cells, row-major
/// `rows × 100`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionMatrix {
    data: Vec<f64>,
    rows: usize,
    fs: f64,
}

impl MotionMatrix {
    pub const COLUMNS: usize = 100;

    pub fn new(data: Vec<f64>, rows: usize, fs: f64) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidSamplingRate(fs));
        }
        if data.len() != rows * Self::COLUMNS {
            return Err(Error::LengthMismatch(format!(
                "{} values for {rows} rows of {} columns",
                data.len(),
                Self::COLUMNS
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { data, rows, fs })
    }

    pub fn from_columns(columns: &[Vec<f64>], fs: f64) -> Result<Self> {
        if columns.len() != Self::COLUMNS {
            return Err(Error::LengthMismatch(format!("{} columns, expected 100", columns.len())));
        }
        let rows = columns[0].len();
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::LengthMismatch("ragged motion columns".into()));
        }
        let data = (0..rows)
            .flat_map(|i| columns.iter().map(move |c| c[i]))
            .collect();
        Self::new(data, rows, fs)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * Self::COLUMNS..(i + 1) * Self::COLUMNS]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * Self::COLUMNS + c]).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, Self::COLUMNS, &self.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RespConfig {
    /// Bandpass of the contact-PPG route, breaths per minute.
    pub ppg_band_bpm: (f64, f64),
    pub ppg_order: usize,
    /// Band scored when ranking motion components, breaths per minute.
    pub snr_band_bpm: (f64, f64),
    pub n_components: usize,
    /// Rate search band, breaths per minute.
    pub rate_band_bpm: (f64, f64),
    pub rate_window: f64,
    pub rate_hop: f64,
    /// ZCA regularizer; `None` uses [`ZCA_RELATIVE_EPSILON`] times the largest
    /// eigenvalue.
    pub zca_epsilon: Option<f64>,
    /// Motion estimates whose output band SNR falls below this are flagged.
    pub min_snr: f64,
}

impl Default for RespConfig {
    fn default() -> Self {
        Self {
            ppg_band_bpm: (6.0, 24.0),
            ppg_order: 3,
            snr_band_bpm: (10.0, 20.0),
            n_components: 3,
            rate_band_bpm: (6.0, 30.0),
            rate_window: 30.0,
            rate_hop: 1.0,
            zca_epsilon: None,
            min_snr: 0.1,
        }
    }
}

/// Default ZCA regularizer relative to the largest covariance eigenvalue.
pub const ZCA_RELATIVE_EPSILON: f64 = 1e-9;

/// Fraction of eigenvalues below epsilon at which whitening is refused.
const RANK_DEFICIENT_FRACTION: f64 = 0.2;

/// Sums the z-normalized, respiration-band filtered contact channels.
/// Flat channels are skipped.
pub fn resp_from_ppg(channels: &ChannelSet, cfg: &RespConfig) -> Result<TimeSeries> {
    let (fs, len) = channels.common_grid()?;
    let spec = BandpassSpec::from_bpm(cfg.ppg_band_bpm.0, cfg.ppg_band_bpm.1, cfg.ppg_order);
    let filter = butterworth_bandpass(spec, fs)?;
    let mut sum = vec![0.0; len];
    let mut used = 0;
    for (name, ts) in channels.iter() {
        let Some(z) = znormalize_slice(&ts.samples()[..len]) else {
            log::warn!("skipping flat channel {name}");
            continue;
        };
        for (acc, v) in sum.iter_mut().zip(filtfilt_slice(&filter, &z)?) {
            *acc += v;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::AllChannelsDead);
    }
    let t0 = channels.iter().next().map_or(0.0, |(_, ts)| ts.t0());
    TimeSeries::with_offset(sum, fs, t0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Whitened {
    pub matrix: MotionMatrix,
    /// Covariance eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub epsilon: f64,
    /// Some eigenvalue fell below epsilon.
    pub rank_deficient: bool,
}

/// ZCA whitening: centre the columns, then apply
/// `W = U (Λ + εI)^{-1/2} Uᵀ` on the right. Covariances use divisor N.
pub fn zca_whiten(m: &MotionMatrix, epsilon: Option<f64>) -> Result<Whitened> {
    let n = m.rows();
    if n <= MotionMatrix::COLUMNS {
        return Err(Error::InsufficientData(format!(
            "ZCA needs more than {} rows, got {n}",
            MotionMatrix::COLUMNS
        )));
    }
    let mut x = m.to_matrix();
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let cov = (x.transpose() * &x) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let lambda_max = eig.eigenvalues.max();
    let eps = epsilon.unwrap_or(ZCA_RELATIVE_EPSILON * lambda_max.max(f64::MIN_POSITIVE));
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("ZCA epsilon must be positive, got {eps}")));
    }
    let below = eig.eigenvalues.iter().filter(|&&l| l < eps).count();
    if below as f64 > RANK_DEFICIENT_FRACTION * MotionMatrix::COLUMNS as f64 {
        return Err(Error::RankDeficient {
            below,
            total: MotionMatrix::COLUMNS,
        });
    }
    let scale = eig.eigenvalues.map(|l| 1.0 / (l.max(0.0) + eps).sqrt());
    let w = &eig.eigenvectors * DMatrix::from_diagonal(&scale) * eig.eigenvectors.transpose();
    let y = x * w;
    let data: Vec<f64> = (0..n).flat_map(|i| y.row(i).iter().copied().collect::<Vec<_>>()).collect();
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    Ok(Whitened {
        matrix: MotionMatrix::new(data, n, m.fs())?,
        eigenvalues,
        epsilon: eps,
        rank_deficient: below > 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionRespiration {
    pub waveform: TimeSeries,
    /// Band SNR of the averaged waveform.
    pub snr: f64,
    pub low_confidence: bool,
    /// Selected whitened columns, best first.
    pub selected: Vec<usize>,
    pub rank_deficient: bool,
}

/// Whitens the motion matrix, ranks the components by in-band SNR and
/// averages the best `n_components` after aligning their signs with the best.
pub fn resp_from_motion(m: &MotionMatrix, cfg: &RespConfig) -> Result<MotionRespiration> {
    let duration = m.rows() as f64 / m.fs();
    if duration < 30.0 {
        return Err(Error::TooShort {
            duration,
            required: 30.0,
        });
    }
    if cfg.n_components == 0 || cfg.n_components > MotionMatrix::COLUMNS {
        return Err(Error::InvalidParameter(format!("n_components = {}", cfg.n_components)));
    }
    let whitened = zca_whiten(m, cfg.zca_epsilon)?;
    let band = RateBand::from_bpm(cfg.snr_band_bpm.0, cfg.snr_band_bpm.1);
    let columns: Vec<TimeSeries> = (0..MotionMatrix::COLUMNS)
        .map(|c| TimeSeries::new(whitened.matrix.column(c), m.fs()))
        .collect::<Result<_>>()?;
    let snrs = columns
        .iter()
        .map(|c| dsp::band_snr(c, band))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..MotionMatrix::COLUMNS).collect();
    order.sort_by(|&a, &b| snrs[b].total_cmp(&snrs[a]).then(a.cmp(&b)));
    let selected: Vec<usize> = order[..cfg.n_components].to_vec();

    let reference = columns[selected[0]].samples();
    let mut avg = vec![0.0; m.rows()];
    for &c in &selected {
        let x = columns[c].samples();
        let dot: f64 = x.iter().zip(reference).map(|(a, b)| a * b).sum();
        let sign = if dot < 0.0 { -1.0 } else { 1.0 };
        for (acc, v) in avg.iter_mut().zip(x) {
            *acc += sign * v;
        }
    }
    let k = selected.len() as f64;
    avg.iter_mut().for_each(|v| *v /= k);
    let waveform = TimeSeries::new(avg, m.fs())?;
    let snr = dsp::band_snr(&waveform, band)?;
    Ok(MotionRespiration {
        waveform,
        snr,
        low_confidence: snr < cfg.min_snr,
        selected,
        rank_deficient: whitened.rank_deficient,
    })
}

/// Windowed breathing rate (breaths per minute) via the spectral-peak
/// estimator restricted to the respiration band.
pub fn estimate_resp_rate(ts: &TimeSeries, cfg: &RespConfig) -> Result<RateSeries> {
    dsp::estimate_rate_series(
        ts,
        RateBand::from_bpm(cfg.rate_band_bpm.0, cfg.rate_band_bpm.1),
        cfg.rate_window,
        cfg.rate_hop,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn motion_matrix_shape_checks() {
        assert!(MotionMatrix::new(vec![0.0; 99], 1, 30.0).is_err());
        assert!(MotionMatrix::new(vec![0.0; 100], 1, 0.0).is_err());
        let mut data = vec![0.0; 200];
        data[150] = f64::INFINITY;
        assert!(matches!(
            MotionMatrix::new(data, 2, 30.0),
            Err(Error::NonFinite { index: 150 })
        ));
        let cols: Vec<Vec<f64>> = (0..100).map(|c| vec![c as f64, c as f64 + 0.5]).collect();
        let m = MotionMatrix::from_columns(&cols, 10.0).unwrap();
        assert_eq!(m.row(1)[3], 3.5);
        assert_eq!(m.column(7), vec![7.0, 7.5]);
    }

    #[test]
    fn zca_needs_more_rows_than_columns() {
        let m = MotionMatrix::new(vec![0.0; 100 * 100], 100, 30.0).unwrap();
        assert!(matches!(zca_whiten(&m, None), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn zca_rejects_mostly_singular_input() {
        // Only 10 independent columns.
        let rows = 300;
        let data = (0..rows)
            .flat_map(|i| (0..100).map(move |c| (((i * 31 + (c % 10) * 17) % 97) as f64).sin()))
            .collect();
        let m = MotionMatrix::new(data, rows, 30.0).unwrap();
        assert!(matches!(zca_whiten(&m, None), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn resp_from_ppg_requires_live_channel() {
        let flat = TimeSeries::new(vec![2.0; 4000], 100.0).unwrap();
        let set: ChannelSet = [("a".to_string(), flat)].into_iter().collect();
        assert_eq!(resp_from_ppg(&set, &RespConfig::default()), Err(Error::AllChannelsDead));
    }
}
