//! Pulse transit time from sliding normalized cross-correlation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::TimeSeries;
use crate::stats::{self, TestResult, DEFAULT_ALPHA};

/// Windows whose correlation peak falls below this are flagged as weak.
pub const WEAK_PEAK_R: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PttConfig {
    /// Seconds.
    pub window: f64,
    /// Seconds between window starts.
    pub stride: f64,
    /// Largest lag searched, seconds.
    pub max_lag: f64,
    /// Largest |lag| kept by [`ptt_summary`], seconds.
    pub accept_lag: f64,
    /// Parabolic refinement of the correlation peak.
    pub subsample: bool,
}

impl Default for PttConfig {
    fn default() -> Self {
        Self {
            window: 5.0,
            stride: 0.010,
            max_lag: 0.300,
            accept_lag: 0.200,
            subsample: true,
        }
    }
}

impl PttConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.window, self.stride, self.max_lag, self.accept_lag]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !finite {
            return Err(Error::InvalidParameter(format!("ptt config must be positive: {self:?}")));
        }
        if self.max_lag >= self.window / 2.0 {
            return Err(Error::InvalidParameter(format!(
                "max_lag {} must be below half the window {}",
                self.max_lag, self.window
            )));
        }
        if self.accept_lag > self.max_lag {
            return Err(Error::InvalidParameter(format!(
                "accept_lag {} exceeds max_lag {}",
                self.accept_lag, self.max_lag
            )));
        }
        Ok(())
    }
}

/// Per-window lags between two sites. A positive lag means the second site
/// trails the first. Windows with a flat segment carry `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagSeries {
    pub pair: (String, String),
    pub centers: Vec<f64>,
    pub lag_ms: Vec<Option<f64>>,
    pub peak_r: Vec<Option<f64>>,
}

impl LagSeries {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn is_weak(&self, i: usize) -> bool {
        self.peak_r[i].is_none_or(|r| r < WEAK_PEAK_R)
    }

    /// Defined lags, in window order.
    pub fn lags(&self) -> impl Iterator<Item = f64> + '_ {
        self.lag_ms.iter().flatten().copied()
    }

    pub fn median_lag_ms(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.lags().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(quantile_sorted(&v, 0.5))
    }
}

/// Prefix sums of values and squares, centred on the global mean.
struct Prefix {
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Prefix {
    fn new(v: &[f64]) -> Self {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let mut sum = Vec::with_capacity(v.len() + 1);
        let mut sq = Vec::with_capacity(v.len() + 1);
        let (mut s, mut q) = (0.0, 0.0);
        sum.push(0.0);
        sq.push(0.0);
        for x in v {
            let d = x - mean;
            s += d;
            q += d * d;
            sum.push(s);
            sq.push(q);
        }
        Self { sum, sq }
    }

    fn range(&self, start: usize, len: usize) -> (f64, f64) {
        (self.sum[start + len] - self.sum[start], self.sq[start + len] - self.sq[start])
    }
}

fn window_corr(
    x: &[f64],
    y: &[f64],
    xc: &Prefix,
    yc: &Prefix,
    x_mean: f64,
    y_mean: f64,
    xs: usize,
    ys: usize,
    w: usize,
) -> Option<f64> {
    let n = w as f64;
    let (sx, qx) = xc.range(xs, w);
    let (sy, qy) = yc.range(ys, w);
    let vx = qx - sx * sx / n;
    let vy = qy - sy * sy / n;
    if vx <= 1e-12 * qx.max(f64::MIN_POSITIVE) || vy <= 1e-12 * qy.max(f64::MIN_POSITIVE) {
        return None;
    }
    let dot: f64 = x[xs..xs + w]
        .iter()
        .zip(&y[ys..ys + w])
        .map(|(a, b)| (a - x_mean) * (b - y_mean))
        .sum();
    Some(((dot - sx * sy / n) / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

/// Sliding-window lag of `y` relative to `x`: for each window of `x`, the
/// shift of `y` within ±max_lag that maximizes Pearson r.
pub fn sliding_xcorr_lag(
    x: &TimeSeries,
    y: &TimeSeries,
    cfg: &PttConfig,
    pair: (&str, &str),
) -> Result<LagSeries> {
    cfg.validate()?;
    if (x.fs() - y.fs()).abs() > 1e-9 * x.fs() {
        return Err(Error::SamplingRateMismatch(format!("{} Hz vs {} Hz", x.fs(), y.fs())));
    }
    let fs = x.fs();
    // Align both on the shared time span.
    let offset = ((y.t0() - x.t0()) * fs).round() as isize;
    let x_start = offset.max(0) as usize;
    let y_start = (-offset).max(0) as usize;
    let n = (x.len().saturating_sub(x_start)).min(y.len().saturating_sub(y_start));
    let xs = &x.samples()[x_start..x_start + n];
    let ys = &y.samples()[y_start..y_start + n];
    let t0 = x.t0() + x_start as f64 / fs;

    let w = (cfg.window * fs).round() as usize;
    let l = (cfg.max_lag * fs).round() as usize;
    let stride = ((cfg.stride * fs).round() as usize).max(1);
    if n < w + 2 * l {
        return Err(Error::SignalTooShort { len: n, min: w + 2 * l });
    }
    let xp = Prefix::new(xs);
    let yp = Prefix::new(ys);
    let x_mean = xs.iter().sum::<f64>() / n as f64;
    let y_mean = ys.iter().sum::<f64>() / n as f64;

    let starts: Vec<usize> = (l..=n - w - l).step_by(stride).collect();
    let results: Vec<(Option<f64>, Option<f64>)> = starts
        .par_iter()
        .map(|&s| {
            let rs: Vec<Option<f64>> = (0..=2 * l)
                .map(|k| window_corr(xs, ys, &xp, &yp, x_mean, y_mean, s, s + k - l, w))
                .collect();
            if rs.iter().any(Option::is_none) {
                return (None, None);
            }
            let rs: Vec<f64> = rs.into_iter().flatten().collect();
            // Smallest |lag| wins exact ties.
            let mut best = l;
            for k in 0..rs.len() {
                let better = rs[k] > rs[best]
                    || (rs[k] == rs[best] && k.abs_diff(l) < best.abs_diff(l));
                if better {
                    best = k;
                }
            }
            let mut shift = best as f64 - l as f64;
            let mut peak = rs[best];
            if cfg.subsample && best > 0 && best < rs.len() - 1 {
                let (a, b, c) = (rs[best - 1], rs[best], rs[best + 1]);
                let denom = a - 2.0 * b + c;
                if denom < 0.0 {
                    let delta = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
                    shift += delta;
                    peak = (b - 0.25 * (a - c) * delta).clamp(-1.0, 1.0);
                }
            }
            (Some(shift / fs * 1000.0), Some(peak))
        })
        .collect();

    let centers = starts
        .iter()
        .map(|&s| t0 + (s as f64 + w as f64 / 2.0) / fs)
        .collect();
    let (lag_ms, peak_r) = results.into_iter().unzip();
    Ok(LagSeries {
        pair: (pair.0.to_owned(), pair.1.to_owned()),
        centers,
        lag_ms,
        peak_r,
    })
}

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PttSummary {
    pub pair: (String, String),
    pub mean_ms: f64,
    pub median_ms: f64,
    pub iqr_ms: f64,
    pub retained: usize,
    pub total: usize,
    pub retention: f64,
}

/// Mean, median and IQR of lags within ±accept_lag.
pub fn ptt_summary(series: &LagSeries, cfg: &PttConfig) -> Result<PttSummary> {
    let limit = cfg.accept_lag * 1000.0 + 1e-9;
    let mut kept: Vec<f64> = series.lags().filter(|l| l.abs() <= limit).collect();
    if kept.is_empty() {
        return Err(Error::AllRejected);
    }
    kept.sort_by(f64::total_cmp);
    let total = series.len();
    Ok(PttSummary {
        pair: series.pair.clone(),
        mean_ms: kept.iter().sum::<f64>() / kept.len() as f64,
        median_ms: quantile_sorted(&kept, 0.5),
        iqr_ms: quantile_sorted(&kept, 0.75) - quantile_sorted(&kept, 0.25),
        retained: kept.len(),
        total,
        retention: kept.len() as f64 / total as f64,
    })
}

/// Per-subject PTT means grouped by site, plus optional residual samples
/// (e.g. contact PTT minus remote PTT) to test for a zero median.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SiteAnalysisInput {
    pub groups: Vec<(String, Vec<f64>)>,
    #[serde(default)]
    pub residuals: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteAnalysis {
    /// Shapiro-Wilk per group, Bonferroni-corrected over the groups.
    pub normality: Vec<TestResult>,
    pub equal_variance: Option<TestResult>,
    pub kruskal_wallis: TestResult,
    /// Wilcoxon signed-rank on each mean-centred residual sample,
    /// Bonferroni-corrected over the residual samples.
    pub residuals: Vec<TestResult>,
    /// Tests that could not be computed, with the reason.
    pub skipped: Vec<String>,
}

/// Shapiro-Wilk, Bartlett and Kruskal-Wallis across site groups, and
/// Wilcoxon on centred residuals.
pub fn ptt_site_analysis(input: &SiteAnalysisInput) -> Result<SiteAnalysis> {
    if input.groups.len() < 2 {
        return Err(Error::InsufficientData("need at least two site groups".into()));
    }
    if let Some((name, g)) = input.groups.iter().find(|(_, g)| g.len() < 3) {
        return Err(Error::InsufficientData(format!(
            "group {name} has {} subjects, need at least 3",
            g.len()
        )));
    }
    let mut skipped = Vec::new();
    let shapiro_alpha = stats::bonferroni(DEFAULT_ALPHA, input.groups.len());
    let mut normality = Vec::new();
    for (name, g) in &input.groups {
        match stats::shapiro_wilk(g) {
            Ok(r) => normality.push(r.named(format!("shapiro-wilk {name}")).with_alpha(shapiro_alpha)),
            Err(e) => skipped.push(format!("shapiro-wilk {name}: {e}")),
        }
    }
    let slices: Vec<&[f64]> = input.groups.iter().map(|(_, g)| g.as_slice()).collect();
    let equal_variance = match stats::bartlett(&slices) {
        Ok(r) => Some(r),
        Err(e) => {
            skipped.push(format!("bartlett: {e}"));
            None
        }
    };
    let kruskal_wallis = match stats::kruskal_wallis(&slices) {
        Ok(r) => r,
        // Identical constant groups carry no evidence of a difference.
        Err(Error::AllTied) => TestResult::new("kruskal-wallis", 0.0, 1.0),
        Err(e) => return Err(e),
    };
    let wilcoxon_alpha = stats::bonferroni(DEFAULT_ALPHA, input.residuals.len());
    let mut residuals = Vec::new();
    for (name, r) in &input.residuals {
        if r.is_empty() {
            skipped.push(format!("wilcoxon {name}: empty"));
            continue;
        }
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let centred: Vec<f64> = r.iter().map(|v| v - mean).collect();
        match stats::wilcoxon_signed_rank(&centred) {
            Ok(t) => residuals.push(t.named(format!("wilcoxon {name}")).with_alpha(wilcoxon_alpha)),
            Err(e) => skipped.push(format!("wilcoxon {name}: {e}")),
        }
    }
    Ok(SiteAnalysis {
        normality,
        equal_variance,
        kruskal_wallis,
        residuals,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pulse(fs: f64, n: usize, delay: f64) -> TimeSeries {
        TimeSeries::from_fn(n, fs, |t| {
            let t = t - delay;
            let p = 2.0 * std::f64::consts::PI * 1.2 * t;
            p.sin() + 0.4 * (2.0 * p).sin() + 0.2 * (3.0 * p).sin()
        })
        .unwrap()
    }

    #[test]
    fn config_invariants() {
        assert!(PttConfig::default().validate().is_ok());
        let bad = PttConfig { max_lag: 3.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PttConfig { accept_lag: 0.4, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn integer_shift_without_refinement() {
        let fs = 400.0;
        let x = pulse(fs, 8000, 0.0);
        let y = pulse(fs, 8000, 0.050);
        let cfg = PttConfig { subsample: false, stride: 0.5, ..Default::default() };
        let s = sliding_xcorr_lag(&x, &y, &cfg, ("x", "y")).unwrap();
        assert!(!s.is_empty());
        assert!(s.lags().all(|l| (l - 50.0).abs() < 1e-9));
    }

    #[test]
    fn flat_window_leaves_gap() {
        let x = TimeSeries::new(vec![1.0; 4000], 400.0).unwrap();
        let y = pulse(400.0, 4000, 0.0);
        let s = sliding_xcorr_lag(&x, &y, &PttConfig { stride: 1.0, ..Default::default() }, ("x", "y")).unwrap();
        assert!(s.lag_ms.iter().all(Option::is_none));
        assert!(s.is_weak(0));
    }

    #[test]
    fn too_short_rejected() {
        let x = pulse(400.0, 1000, 0.0);
        assert!(matches!(
            sliding_xcorr_lag(&x, &x, &PttConfig::default(), ("x", "x")),
            Err(Error::SignalTooShort { .. })
        ));
    }

    fn series(lags: &[f64]) -> LagSeries {
        LagSeries {
            pair: ("a".into(), "b".into()),
            centers: (0..lags.len()).map(|i| i as f64).collect(),
            lag_ms: lags.iter().map(|&l| Some(l)).collect(),
            peak_r: vec![Some(0.9); lags.len()],
        }
    }

    #[test]
    fn summary_of_constant_series() {
        let s = ptt_summary(&series(&[50.0; 20]), &PttConfig::default()).unwrap();
        assert_eq!((s.mean_ms, s.median_ms, s.iqr_ms), (50.0, 50.0, 0.0));
        assert_eq!(s.retention, 1.0);
    }

    #[test]
    fn summary_rejects_outliers() {
        let mut lags = vec![50.0; 18];
        lags.extend([280.0, -280.0]);
        let s = ptt_summary(&series(&lags), &PttConfig::default()).unwrap();
        assert_eq!(s.mean_ms, 50.0);
        assert_eq!(s.retained, 18);
        assert!((s.retention - 0.9).abs() < 1e-12);
        assert_eq!(ptt_summary(&series(&[250.0]), &PttConfig::default()), Err(Error::AllRejected));
    }

    #[test]
    fn quantiles_type_seven() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(quantile_sorted(&v, 0.75), 3.25);
    }

    #[test]
    fn site_analysis_requires_three_per_group() {
        let input = SiteAnalysisInput {
            groups: vec![("arm".into(), vec![1.0, 2.0]), ("leg".into(), vec![1.0, 2.0, 3.0])],
            residuals: vec![],
        };
        assert!(matches!(ptt_site_analysis(&input), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn site_analysis_identical_groups() {
        let g = vec![20.0, 22.0, 25.0, 19.0, 30.0];
        let input = SiteAnalysisInput {
            groups: vec![("arm".into(), g.clone()), ("leg".into(), g)],
            residuals: vec![("arm".into(), vec![1.0, -2.0, 0.5, 3.0, -1.5, 0.2])],
        };
        let r = ptt_site_analysis(&input).unwrap();
        assert!(r.kruskal_wallis.p > 0.99);
        assert!(!r.kruskal_wallis.significant);
        assert_eq!(r.normality.len(), 2);
        assert!(r.normality.iter().all(|t| t.alpha_corrected == 0.025));
        assert_eq!(r.residuals[0].alpha_corrected, 0.05);
    }
}
