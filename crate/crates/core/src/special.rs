//! Standard normal distribution functions with tail-stable log forms.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{PI, SQRT_2};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, accurate in relative terms deep into the lower tail.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal CDF by Hart's rational approximation with a continued
/// fraction tail (one `exp` per call). Relative error is below 1e-8 down to
/// `x = -37`, below which it returns 0. Used for particle weights, where only
/// ratios matter and the call count is large.
#[inline]
pub fn norm_cdf_fast(x: f64) -> f64 {
    let ax = x.abs();
    let lower = if ax > 37.0 {
        0.0
    } else {
        let e = (-0.5 * ax * ax).exp();
        if ax < 7.071_067_811_865_47 {
            let num = (((((0.035_262_496_599_891_1 * ax + 0.700_383_064_443_688) * ax + 6.373_962_203_531_65) * ax
                + 33.912_866_078_383)
                * ax
                + 112.079_291_497_871)
                * ax
                + 221.213_596_169_931)
                * ax
                + 220.206_867_912_376;
            let den = ((((((0.088_388_347_648_318_4 * ax + 1.755_667_163_182_64) * ax + 16.064_177_579_207) * ax
                + 86.780_732_202_946_1)
                * ax
                + 296.564_248_779_674)
                * ax
                + 637.333_633_378_831)
                * ax
                + 793.826_512_519_948)
                * ax
                + 440.413_735_824_752;
            e * num / den
        } else {
            let mut b = ax;
            for k in (1..=24).rev() {
                b = ax + k as f64 / b;
            }
            e / b / 2.506_628_274_631_000_5
        }
    };
    if x > 0.0 {
        1.0 - lower
    } else {
        lower
    }
}

/// `ln Φ(x)`. Never NaN for finite or infinite input; returns `-inf` only at `x = -inf`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x > 5.0 {
        // Φ(x) ≈ 1; use log1p of the upper tail.
        return (-0.5 * erfc(x / SQRT_2)).ln_1p();
    }
    if x > -30.0 {
        return norm_cdf(x).ln();
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    // Asymptotic (Mills ratio) expansion; terms are below 1e-17 by the fifth for x < -30.
    let x2 = x * x;
    let inv = 1.0 / x2;
    let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
    -0.5 * x2 - (-x).ln() - LN_SQRT_2PI + series.ln()
}

/// Inverse standard normal CDF.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    // One Newton step against the accurate CDF.
    let d = norm_pdf(x);
    if d > 0.0 {
        x - (norm_cdf(x) - p) / d
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_cdf_matches_reference() {
        let mut worst: f64 = 0.0;
        let mut x = -37.0;
        while x < 9.0 {
            let (a, b) = (norm_cdf_fast(x), norm_cdf(x));
            worst = worst.max(((a - b) / b).abs());
            x += 1e-3;
        }
        assert!(worst < 1e-8, "{worst:e}");
        assert_eq!(norm_cdf_fast(-40.0), 0.0);
        assert_eq!(norm_cdf_fast(0.0), 0.5);
    }

    #[test]
    fn cdf_reference_values() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert!((norm_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((norm_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        assert!((norm_cdf(-10.0) / 7.619_853_024_160_47e-24 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_cdf_is_continuous_across_branches() {
        for &x in &[-30.0f64, 5.0] {
            let lo = log_norm_cdf(x - 1e-9);
            let hi = log_norm_cdf(x + 1e-9);
            assert!((lo - hi).abs() < 1e-6 * lo.abs().max(1e-12), "{x}: {lo} vs {hi}");
        }
        // ln Φ(-40) = -804.60844201...
        assert!((log_norm_cdf(-40.0) + 804.608_442_013_753_9).abs() < 1e-9);
        assert!(log_norm_cdf(-1e6).is_finite());
        assert!(log_norm_cdf(40.0) <= 0.0);
    }

    #[test]
    fn ppf_inverts_cdf() {
        for &p in &[1e-10, 0.01, 0.1587, 0.5, 0.95, 0.999_999] {
            assert!((norm_cdf(norm_ppf(p)) / p - 1.0).abs() < 1e-10);
        }
        assert!((norm_ppf(0.95) - 1.644_853_626_951_472_2).abs() < 1e-12);
    }
}
