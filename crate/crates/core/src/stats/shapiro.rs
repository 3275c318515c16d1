//! Royston's AS R94 algorithm for the Shapiro-Wilk W test.

use statrs::distribution::ContinuousCDF;

use super::std_normal;
use crate::error::{Error, Result};

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

/// Half of the antisymmetric coefficient vector, largest first.
fn coefficients(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let normal = std_normal();
    let an25 = n as f64 + 0.25;
    let m: Vec<f64> = (1..=half)
        .map(|i| normal.inverse_cdf((i as f64 - 0.375) / an25))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / (n as f64).sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;
    let mut a = vec![0.0; half];
    let (first_scaled, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
            / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
            .sqrt();
        a[1] = a2;
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        (1, fac)
    };
    a[0] = a1;
    for i in first_scaled..half {
        a[i] = -m[i] / fac;
    }
    a
}

fn p_value(w: f64, n: usize) -> f64 {
    if n == 3 {
        use std::f64::consts::{FRAC_PI_3, PI};
        return (6.0 / PI * (w.sqrt().asin() - FRAC_PI_3)).max(0.0);
    }
    let an = n as f64;
    let w1 = (1.0 - w).ln();
    let (y, mean, sd) = if n <= 11 {
        let gamma = poly(&G, an);
        if w1 >= gamma {
            return 1e-99;
        }
        (-(gamma - w1).ln(), poly(&C3, an), poly(&C4, an).exp())
    } else {
        let ln_n = an.ln();
        (w1, poly(&C5, ln_n), poly(&C6, ln_n).exp())
    };
    1.0 - std_normal().cdf((y - mean) / sd)
}

/// Returns `(W, p)`.
pub fn shapiro_wilk_w(x: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    if n < 3 {
        return Err(Error::SampleTooSmall { required: 3, actual: n });
    }
    if n > 5000 {
        return Err(Error::InvalidParameter(format!("shapiro-wilk supports n <= 5000, got {n}")));
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let range = sorted[n - 1] - sorted[0];
    if range <= 0.0 {
        return Err(Error::AllTied);
    }
    let half_coeffs = coefficients(n);
    let mut coeffs = vec![0.0; n];
    for (i, &a) in half_coeffs.iter().enumerate() {
        coeffs[i] = -a;
        coeffs[n - 1 - i] = a;
    }
    // W is the squared correlation between the ordered sample and the
    // coefficients; scaling by the range keeps the sums well conditioned.
    let xs: Vec<f64> = sorted.iter().map(|v| v / range).collect();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let ma = coeffs.iter().sum::<f64>() / n as f64;
    let (mut saa, mut sxx, mut sax) = (0.0, 0.0, 0.0);
    for (a, x) in coeffs.iter().zip(&xs) {
        let (da, dx) = (a - ma, x - mx);
        saa += da * da;
        sxx += dx * dx;
        sax += da * dx;
    }
    let root = (saa * sxx).sqrt();
    let w = (1.0 - (root - sax) * (root + sax) / (saa * sxx)).clamp(0.0, 1.0);
    Ok((w, p_value(w, n).clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficients_are_normalized() {
        for n in [4, 5, 6, 10, 11, 12, 50, 500] {
            let a = coefficients(n);
            let ss: f64 = 2.0 * a.iter().map(|v| v * v).sum::<f64>();
            assert!((ss - 1.0).abs() < 1e-9, "n={n}: {ss}");
            assert!(a.windows(2).all(|w| w[0] > w[1]), "n={n}");
        }
    }

    #[test]
    fn linear_sample_of_three() {
        // Equally spaced triple: W = 1, p = 1.
        let (w, p) = shapiro_wilk_w(&[1.0, 2.0, 3.0]).unwrap();
        assert!((w - 1.0).abs() < 1e-12);
        assert!((p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn known_value() {
        // Reference: R shapiro.test(c(148,154,158,160,161,162,166,170,182,195,236))
        // W = 0.79, p = 0.0068 (two decimals / two significant figures).
        let x = [148.0, 154.0, 158.0, 160.0, 161.0, 162.0, 166.0, 170.0, 182.0, 195.0, 236.0];
        let (w, p) = shapiro_wilk_w(&x).unwrap();
        assert!((w - 0.79).abs() < 0.01, "{w}");
        assert!(p < 0.01 && p > 0.004, "{p}");
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(shapiro_wilk_w(&[1.0, 2.0]).is_err());
        assert_eq!(shapiro_wilk_w(&[2.0; 5]), Err(Error::AllTied));
        assert!(shapiro_wilk_w(&vec![0.0; 5001]).is_err());
    }
}
