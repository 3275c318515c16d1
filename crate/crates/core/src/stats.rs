//! Error metrics and hypothesis tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::dsp::RateSeries;
use crate::error::{Error, Result};
use crate::signal::TimeSeries;

mod shapiro;

pub use shapiro::shapiro_wilk_w;

/// Significance level before any multiple-comparison correction.
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrErrors {
    pub me: f64,
    pub mae: f64,
    pub rmse: f64,
    pub n_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrErrorReport {
    pub me: f64,
    pub mae: f64,
    pub rmse: f64,
    /// Pearson r between the ground-truth and predicted waveforms.
    pub r_wave: Option<f64>,
    /// Maximum Pearson r over lags up to ±1 s.
    pub mxcorr: Option<f64>,
    pub n_windows: usize,
}

impl HrErrorReport {
    pub fn new(errors: HrErrors, r_wave: Option<f64>, mxcorr: Option<f64>) -> Self {
        Self {
            me: errors.me,
            mae: errors.mae,
            rmse: errors.rmse,
            r_wave,
            mxcorr,
            n_windows: errors.n_windows,
        }
    }
}

/// ME, MAE and RMSE of `pred - truth` over aligned windows.
pub fn hr_errors(truth: &RateSeries, pred: &RateSeries) -> Result<HrErrors> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::MisalignedSeries(format!(
            "{} truth windows vs {} predicted",
            truth.len(),
            pred.len()
        )));
    }
    let tol = truth.hop.min(pred.hop) / 2.0 + 1e-9;
    if let Some((a, b)) = truth
        .centers
        .iter()
        .zip(&pred.centers)
        .find(|(a, b)| (*a - *b).abs() > tol)
    {
        return Err(Error::MisalignedSeries(format!("window centres {a} and {b}")));
    }
    let n = truth.len() as f64;
    let diffs = truth.rate.iter().zip(&pred.rate).map(|(t, p)| p - t);
    let (sum, abs, sq) = diffs.fold((0.0, 0.0, 0.0), |(s, a, q), d| (s + d, a + d.abs(), q + d * d));
    Ok(HrErrors {
        me: sum / n,
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        n_windows: truth.len(),
    })
}

/// Restricts `series` to windows whose centres are within half a hop of a
/// window centre in `reference`, pairing them one-to-one.
pub fn align_rate_series(reference: &RateSeries, series: &RateSeries) -> (RateSeries, RateSeries) {
    let tol = reference.hop.min(series.hop) / 2.0 + 1e-9;
    let mut a = reference.clone();
    let mut b = series.clone();
    for s in [&mut a, &mut b] {
        s.centers.clear();
        s.rate.clear();
        s.confident.clear();
    }
    let mut j = 0;
    for i in 0..reference.len() {
        let c = reference.centers[i];
        while j < series.len() && series.centers[j] < c - tol {
            j += 1;
        }
        if j < series.len() && (series.centers[j] - c).abs() <= tol {
            a.centers.push(c);
            a.rate.push(reference.rate[i]);
            a.confident.push(reference.confident[i]);
            b.centers.push(series.centers[j]);
            b.rate.push(series.rate[j]);
            b.confident.push(series.confident[j]);
            j += 1;
        }
    }
    (a, b)
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(format!("{} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::SampleTooSmall {
            required: 2,
            actual: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("pearson input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Overlapping sample ranges of two series on a shared grid, with `b`
/// displaced by `lag` samples: pairs `a[i]` with `b` at the same time plus lag.
fn overlap(a: &TimeSeries, b: &TimeSeries, lag: isize) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    if (a.fs() - b.fs()).abs() > 1e-9 * a.fs() {
        return Err(Error::SamplingRateMismatch(format!("{} Hz vs {} Hz", a.fs(), b.fs())));
    }
    // Index of a's first sample on b's grid.
    let offset = ((a.t0() - b.t0()) * a.fs()).round() as isize + lag;
    let start_a = (-offset).max(0);
    let start_b = offset.max(0);
    let len = (a.len() as isize - start_a).min(b.len() as isize - start_b);
    if len < 2 {
        return Err(Error::InsufficientData("series do not overlap".into()));
    }
    let (sa, sb, len) = (start_a as usize, start_b as usize, len as usize);
    Ok((sa..sa + len, sb..sb + len))
}

/// Pearson r between two waveforms over their common time span.
pub fn waveform_corr(a: &TimeSeries, b: &TimeSeries) -> Result<f64> {
    let (ra, rb) = overlap(a, b, 0)?;
    pearson(&a.samples()[ra], &b.samples()[rb])
}

/// Maximum Pearson r over lags in `[-max_lag, max_lag]` seconds. A positive
/// lag means `b` trails `a`. Returns `(r_max, lag_seconds)`; the smallest
/// absolute lag wins ties.
pub fn mxcorr(a: &TimeSeries, b: &TimeSeries, max_lag: f64) -> Result<(f64, f64)> {
    let max_lag_n = (max_lag * a.fs()).round() as isize;
    let mut lags: Vec<isize> = (-max_lag_n..=max_lag_n).collect();
    lags.sort_by_key(|l| (l.abs(), *l));
    let mut best: Option<(f64, isize)> = None;
    for lag in lags {
        let Ok((ra, rb)) = overlap(a, b, lag) else { continue };
        let Ok(r) = pearson(&a.samples()[ra], &b.samples()[rb]) else { continue };
        if best.is_none_or(|(br, _)| r > br) {
            best = Some((r, lag));
        }
    }
    best.map(|(r, lag)| (r, lag as f64 / a.fs()))
        .ok_or_else(|| Error::InsufficientData("no lag with a defined correlation".into()))
}

/// Bonferroni-corrected significance level.
pub fn bonferroni(alpha: f64, m: usize) -> f64 {
    alpha / m.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    pub p: f64,
    pub alpha_corrected: f64,
    pub significant: bool,
}

impl TestResult {
    pub fn new(name: impl Into<String>, statistic: f64, p: f64) -> Self {
        let p = p.clamp(0.0, 1.0);
        Self {
            name: name.into(),
            statistic,
            p,
            alpha_corrected: DEFAULT_ALPHA,
            significant: p < DEFAULT_ALPHA,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha_corrected = alpha;
        self.significant = self.p < alpha;
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

fn chi2_sf(x: f64, df: usize) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    1.0 - ChiSquared::new(df as f64).expect("df >= 1").cdf(x)
}

pub(crate) fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Shapiro-Wilk W and p via Royston's AS R94 approximation; 3 ≤ n ≤ 5000.
pub fn shapiro_wilk(x: &[f64]) -> Result<TestResult> {
    let (w, p) = shapiro_wilk_w(x)?;
    Ok(TestResult::new("shapiro-wilk", w, p))
}

/// Bartlett's test for equal variances across groups (chi-square, k−1 df).
pub fn bartlett(groups: &[&[f64]]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::InsufficientData("bartlett needs at least two groups".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::SampleTooSmall {
            required: 2,
            actual: g.len(),
        });
    }
    let k = groups.len() as f64;
    let n_total: f64 = groups.iter().map(|g| g.len() as f64).sum();
    let mut pooled = 0.0;
    let mut log_sum = 0.0;
    let mut inv_sum = 0.0;
    for g in groups {
        let n = g.len() as f64;
        let m = g.iter().sum::<f64>() / n;
        let var = g.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
        if var <= 0.0 {
            return Err(Error::ZeroVariance("bartlett group".into()));
        }
        pooled += (n - 1.0) * var;
        log_sum += (n - 1.0) * var.ln();
        inv_sum += 1.0 / (n - 1.0);
    }
    pooled /= n_total - k;
    let numerator = (n_total - k) * pooled.ln() - log_sum;
    let correction = 1.0 + (inv_sum - 1.0 / (n_total - k)) / (3.0 * (k - 1.0));
    let t = (numerator / correction).max(0.0);
    Ok(TestResult::new("bartlett", t, chi2_sf(t, groups.len() - 1)))
}

/// Midranks (1-based) of `values`, plus the tie-group sizes.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = rank;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Kruskal-Wallis H with tie correction; p from chi-square with k−1 df.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::InsufficientData("kruskal-wallis needs at least two groups".into()));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::SampleTooSmall {
            required: 1,
            actual: 0,
        });
    }
    let all: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let n = all.len() as f64;
    let (ranks, ties) = midranks(&all);
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let correction = 1.0 - tie_term / (n * n * n - n);
    if correction <= 0.0 {
        return Err(Error::AllTied);
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = (12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction;
    let h = h.max(0.0);
    Ok(TestResult::new("kruskal-wallis", h, chi2_sf(h, groups.len() - 1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    /// Exact for n ≤ 25 non-zero values, normal approximation otherwise.
    Auto,
    Exact,
    Normal,
}

/// Largest number of non-zero values handled exactly by [`WilcoxonMethod::Auto`].
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Two-sided Wilcoxon signed-rank test of zero median. Exact zeros are
/// discarded; the statistic is the positive rank sum W+.
pub fn wilcoxon_signed_rank(x: &[f64]) -> Result<TestResult> {
    wilcoxon_signed_rank_with(x, WilcoxonMethod::Auto)
}

pub fn wilcoxon_signed_rank_with(x: &[f64], method: WilcoxonMethod) -> Result<TestResult> {
    let nonzero: Vec<f64> = x.iter().copied().filter(|v| *v != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return Err(Error::AllTied);
    }
    let abs: Vec<f64> = nonzero.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, v)| **v > 0.0)
        .map(|(r, _)| r)
        .sum();
    let exact = match method {
        WilcoxonMethod::Auto => n <= WILCOXON_EXACT_MAX,
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::Normal => false,
    };
    let p = if exact {
        wilcoxon_exact_p(&ranks, w_plus)
    } else {
        if n < 6 {
            return Err(Error::SampleTooSmall { required: 6, actual: n });
        }
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        if var <= 0.0 {
            return Err(Error::AllTied);
        }
        let dev = ((w_plus - mean).abs() - 0.5).max(0.0);
        2.0 * (1.0 - std_normal().cdf(dev / var.sqrt()))
    };
    Ok(TestResult::new("wilcoxon", w_plus, p.min(1.0)))
}

/// Exact null distribution of W+ given the (possibly tied) ranks: every sign
/// pattern is equally likely. Ranks are doubled so midranks become integers.
fn wilcoxon_exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut dist = vec![0.0f64; total + 1];
    dist[0] = 1.0;
    let mut reach = 0;
    for &d in &doubled {
        for s in (0..=reach).rev() {
            let v = dist[s] * 0.5;
            dist[s] = v;
            dist[s + d] += v;
        }
        reach += d;
    }
    let w = (2.0 * w_plus).round() as usize;
    let lower: f64 = dist[..=w].iter().sum();
    let upper: f64 = dist[w..].iter().sum();
    (2.0 * lower.min(upper)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(rate: &[f64]) -> RateSeries {
        RateSeries {
            centers: (0..rate.len()).map(|i| 5.0 + i as f64).collect(),
            rate: rate.to_vec(),
            confident: vec![true; rate.len()],
            window: 10.0,
            hop: 1.0,
            band: crate::dsp::HR_BAND,
        }
    }

    #[test]
    fn hr_error_examples() {
        let truth = series(&[70.0, 80.0, 90.0]);
        let e = hr_errors(&truth, &truth).unwrap();
        assert_eq!((e.me, e.mae, e.rmse), (0.0, 0.0, 0.0));
        let e = hr_errors(&truth, &series(&[72.0, 82.0, 92.0])).unwrap();
        assert!((e.me - 2.0).abs() < 1e-12 && (e.mae - 2.0).abs() < 1e-12 && (e.rmse - 2.0).abs() < 1e-12);
        let e = hr_errors(&truth, &series(&[72.0, 77.0, 95.0])).unwrap();
        assert!((e.me - 4.0 / 3.0).abs() < 1e-12);
        assert!((e.mae - 10.0 / 3.0).abs() < 1e-12);
        assert!((e.rmse - (38.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((e.rmse - 3.559).abs() < 1e-3);
    }

    #[test]
    fn misaligned_series_rejected() {
        let truth = series(&[70.0, 80.0]);
        assert!(hr_errors(&truth, &series(&[70.0])).is_err());
        let mut shifted = series(&[70.0, 80.0]);
        shifted.centers.iter_mut().for_each(|c| *c += 0.8);
        assert!(matches!(hr_errors(&truth, &shifted), Err(Error::MisalignedSeries(_))));
    }

    #[test]
    fn align_pairs_common_windows() {
        let a = series(&[1.0, 2.0, 3.0, 4.0]);
        let mut b = series(&[20.0, 30.0]);
        b.centers = vec![6.1, 7.0];
        let (x, y) = align_rate_series(&a, &b);
        assert_eq!(x.rate, vec![2.0, 3.0]);
        assert_eq!(y.rate, vec![20.0, 30.0]);
    }

    #[test]
    fn bonferroni_thresholds() {
        assert_eq!(bonferroni(0.05, 4), 0.0125);
        assert_eq!(bonferroni(0.05, 10), 0.005);
    }

    #[test]
    fn kruskal_wallis_hand_example() {
        let r = kruskal_wallis(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        assert!((r.statistic - 27.0 / 7.0).abs() < 1e-12);
        assert!((r.p - 0.049_534).abs() < 1e-5);
        assert_eq!(kruskal_wallis(&[&[1.0, 1.0], &[1.0]]), Err(Error::AllTied));
    }

    #[test]
    fn wilcoxon_symmetric_sample() {
        let r = wilcoxon_signed_rank(&[1.0, -1.0, 2.0, -2.0, 3.0, -3.0]).unwrap();
        assert_eq!(r.p, 1.0);
        assert_eq!(r.statistic, 10.5);
        assert_eq!(wilcoxon_signed_rank(&[0.0, 0.0]), Err(Error::AllTied));
        assert!(wilcoxon_signed_rank_with(&[1.0, 2.0, 3.0], WilcoxonMethod::Normal).is_err());
    }

    #[test]
    fn wilcoxon_all_positive_exact() {
        // Only one of 2^6 sign patterns reaches W+ = 21: two-sided p = 2/64.
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((r.p - 2.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn bartlett_equal_variances() {
        let r = bartlett(&[&[1.0, 2.0, 3.0, 4.0], &[11.0, 12.0, 13.0, 14.0]]).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert!((r.p - 1.0).abs() < 1e-12);
        assert!(bartlett(&[&[1.0, 1.0], &[1.0, 2.0]]).is_err());
        assert!(bartlett(&[&[1.0], &[1.0, 2.0]]).is_err());
    }

    #[test]
    fn significance_flag_follows_alpha() {
        let r = TestResult::new("x", 1.0, 0.01);
        assert!(r.significant);
        let r = r.with_alpha(bonferroni(0.05, 10));
        assert!(!r.significant);
        assert_eq!(r.alpha_corrected, 0.005);
    }

    #[test]
    fn mxcorr_identity() {
        let ts = TimeSeries::from_fn(2000, 100.0, |t| (t * 7.3).sin() + (t * 2.1).cos()).unwrap();
        let (r, lag) = mxcorr(&ts, &ts, 1.0).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert_eq!(lag, 0.0);
    }
}
