//! Scalar special functions shared across the crate.
//!
//! Everything here is deterministic scalar math: the modified Bessel term of
//! the Matern(nu = 1) correlation, Student-t tail probabilities through the
//! regularized incomplete beta function, and Normal tail helpers that stay
//! accurate far into the lower tail (needed by censored-likelihood and
//! truncated-normal code).

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::error::{Result, ShotError};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74;

/// Modified Bessel function of the second kind, order one.
///
/// Polynomial approximations from Abramowitz & Stegun 9.8.7-9.8.8; absolute
/// error below 1e-7 on both branches, which is far inside every tolerance
/// this crate asserts against it.
pub fn bessel_k1(x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k1 requires x > 0");
    if x <= 2.0 {
        let t = x / 3.75;
        let t2 = t * t;
        // x * I1(x), A&S 9.8.3
        let i1_over_x = 0.5
            + t2 * (0.878_905_94
                + t2 * (0.514_988_69
                    + t2 * (0.150_849_34
                        + t2 * (0.026_587_33 + t2 * (0.003_015_32 + t2 * 0.000_324_11)))));
        let i1 = x * i1_over_x;
        let s = x / 2.0;
        let s2 = s * s;
        // x * K1(x), A&S 9.8.7
        let xk1 = x * (x / 2.0).ln() * i1
            + 1.0
            + s2 * (0.154_431_44
                + s2 * (-0.672_785_79
                    + s2 * (-0.181_568_97
                        + s2 * (-0.019_194_02 + s2 * (-0.001_104_04 + s2 * (-0.000_046_86))))));
        xk1 / x
    } else {
        let u = 2.0 / x;
        // sqrt(x) e^x K1(x), A&S 9.8.8
        let poly = 1.253_314_14
            + u * (0.234_986_19
                + u * (-0.036_556_2
                    + u * (0.015_042_68
                        + u * (-0.007_803_53 + u * (0.003_256_14 + u * (-0.000_682_45))))));
        poly * (-x).exp() / x.sqrt()
    }
}

/// `x * K1(x)` with its `x -> 0` limit of 1. This is the Matern(nu = 1)
/// correlation kernel as a function of scaled distance.
pub fn x_bessel_k1(x: f64) -> f64 {
    assert!(x >= 0.0, "x_bessel_k1 requires x >= 0");
    if x == 0.0 {
        1.0
    } else {
        x * bessel_k1(x)
    }
}

/// Student-t survival function with (possibly non-integer) `df` degrees of
/// freedom, computed through the regularized incomplete beta function.
pub fn student_t_sf(x: f64, df: f64) -> f64 {
    assert!(df > 0.0, "student_t_sf requires df > 0");
    if x == 0.0 {
        return 0.5;
    }
    let z = df / (df + x * x);
    let half_tail = 0.5 * beta_reg(0.5 * df, 0.5, z);
    if x > 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal survival function.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal log-density.
pub fn ln_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Log of the standard normal CDF, stable arbitrarily far into the lower
/// tail. Below `x = -10` the direct CDF loses digits (and underflows near
/// `x = -38`), so an asymptotic expansion of Mills' ratio takes over.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x >= -10.0 {
        norm_cdf(x).ln()
    } else {
        // ln Phi(x) = -x^2/2 - ln(-x) - ln sqrt(2 pi) + ln(1 - 1/x^2 + 3/x^4 - ...)
        let inv2 = 1.0 / (x * x);
        let series = 1.0 + inv2 * (-1.0 + inv2 * (3.0 + inv2 * (-15.0 + inv2 * 105.0)));
        -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "norm_quantile requires p in (0,1)");
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Standard normal quantile given `ln p`, usable when `p` itself would
/// underflow. Newton iterations on `ln_norm_cdf` from an asymptotic start.
pub fn norm_quantile_from_ln(ln_p: f64) -> f64 {
    assert!(ln_p < 0.0, "norm_quantile_from_ln requires ln_p < 0");
    if ln_p > -30.0 {
        return norm_quantile(ln_p.exp());
    }
    // Fixed-point refinement of z^2/2 + ln z + ln sqrt(2 pi) = -ln_p, then Newton.
    let target = -ln_p;
    let mut z = (2.0 * target).sqrt();
    for _ in 0..4 {
        z = (2.0 * (target - z.ln() - LN_SQRT_2PI)).max(1.0).sqrt();
    }
    let mut q = -z;
    for _ in 0..8 {
        let f = ln_norm_cdf(q) - ln_p;
        let dlog = (ln_norm_pdf(q) - ln_norm_cdf(q)).exp(); // phi/Phi > 0
        let step = f / dlog;
        q -= step;
        if step.abs() < 1e-13 * q.abs().max(1.0) {
            break;
        }
    }
    q
}

/// Log-sum-exp over a slice, with the empty-slice convention `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + sum.ln()
}

/// Linear-interpolation (type-7) quantile of an already sorted slice.
pub fn quantile_type7_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p), "p must lie in [0,1]");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile of an unsorted slice (sorts a copy).
pub fn quantile_type7(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    quantile_type7_sorted(&v, p)
}

/// Mean and standard deviation of a Normal(mean, sd) truncated to
/// `(-inf, upper]`. Used as an oracle for the truncated-normal sampler and
/// for reporting.
pub fn trunc_normal_upper_moments(mean: f64, sd: f64, upper: f64) -> (f64, f64) {
    let alpha = (upper - mean) / sd;
    let lambda = (ln_norm_pdf(alpha) - ln_norm_cdf(alpha)).exp(); // phi/Phi
    let m = mean - sd * lambda;
    let var = sd * sd * (1.0 - lambda * (lambda + alpha));
    (m, var.max(0.0).sqrt())
}

/// Validate that a value is finite, mapping failures to a numeric error.
pub fn ensure_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ShotError::Numeric(format!("{what} is not finite ({value})")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Quadrature oracle: K1(x) = int_0^inf exp(-x cosh t) cosh t dt.
    fn k1_quadrature(x: f64) -> f64 {
        let n = 400_000;
        let upper = 26.0;
        let h = upper / n as f64;
        let f = |t: f64| (-x * t.cosh()).exp() * t.cosh();
        // Simpson's rule
        let mut sum = f(0.0) + f(upper);
        for i in 1..n {
            let t = i as f64 * h;
            sum += if i % 2 == 1 { 4.0 * f(t) } else { 2.0 * f(t) };
        }
        sum * h / 3.0
    }

    #[test]
    fn bessel_k1_matches_quadrature() {
        for &x in &[0.05, 0.1, 0.5, 1.0, 2.0, 2.5, 5.0, 10.0] {
            let approx_val = bessel_k1(x);
            let oracle = k1_quadrature(x);
            assert_relative_eq!(approx_val, oracle, max_relative = 2e-6);
        }
    }

    #[test]
    fn x_k1_at_one() {
        // Frozen from the quadrature oracle: 1 * K1(1) = 0.6019072301972346
        assert_relative_eq!(x_bessel_k1(1.0), 0.601_907_230_197_234_6, max_relative = 1e-6);
    }

    #[test]
    fn x_k1_limit_at_zero() {
        assert_eq!(x_bessel_k1(0.0), 1.0);
        assert_relative_eq!(x_bessel_k1(1e-6), 1.0, epsilon = 1e-5);
    }

    #[test]
    fn student_t_sf_closed_forms() {
        // df = 2: survival is (1 - x / sqrt(2 + x^2)) / 2.
        for &x in &[-3.0, -0.5, 0.0, 0.7, 1.0, std::f64::consts::SQRT_2, 2.0, 10.0] {
            let closed = 0.5 * (1.0 - x / (2.0 + x * x).sqrt());
            assert_relative_eq!(student_t_sf(x, 2.0), closed, epsilon = 1e-12);
        }
        // df = 1 (Cauchy): survival is 1/2 - atan(x)/pi.
        for &x in &[-2.0f64, 0.3, 4.0] {
            let closed = 0.5 - x.atan() / std::f64::consts::PI;
            assert_relative_eq!(student_t_sf(x, 1.0), closed, epsilon = 1e-12);
        }
    }

    #[test]
    fn student_t_sf_symmetry_and_monotonicity() {
        let df = 3.7;
        for &x in &[0.1, 0.9, 2.4] {
            assert_relative_eq!(
                student_t_sf(x, df) + student_t_sf(-x, df),
                1.0,
                epsilon = 1e-12
            );
        }
        assert!(student_t_sf(1.0, df) > student_t_sf(2.0, df));
    }

    #[test]
    fn ln_norm_cdf_matches_direct_in_overlap() {
        for &x in &[-10.0, -9.5, -8.0, -4.0, -1.0, 0.0, 2.0] {
            assert_relative_eq!(ln_norm_cdf(x), norm_cdf(x).ln(), max_relative = 1e-9);
        }
        // Deep tail stays finite and ordered.
        assert!(ln_norm_cdf(-50.0) < ln_norm_cdf(-40.0));
        assert!(ln_norm_cdf(-40.0).is_finite());
    }

    #[test]
    fn ln_quantile_inverts_ln_cdf() {
        for &x in &[-45.0, -20.0, -12.0, -7.0, -2.0] {
            let lp = ln_norm_cdf(x);
            assert_relative_eq!(norm_quantile_from_ln(lp), x, max_relative = 1e-8);
        }
    }

    #[test]
    fn quantile_type7_examples() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_relative_eq!(quantile_type7(&v, 0.5), 50.5);
        assert_relative_eq!(quantile_type7(&v, 0.25), 25.75);
        assert_relative_eq!(quantile_type7(&v, 0.75), 75.25);
        assert_relative_eq!(quantile_type7(&v, 0.75) - quantile_type7(&v, 0.25), 49.5);
    }

    #[test]
    fn logsumexp_basics() {
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_relative_eq!(
            logsumexp(&[0.0, 0.0]),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_relative_eq!(logsumexp(&[-1e4, 3.0]), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn truncated_moments_match_naive_formula() {
        let (m, s) = trunc_normal_upper_moments(1.0, 2.0, 0.0);
        let alpha: f64 = -0.5;
        let lambda = (-0.5 * alpha * alpha).exp()
            / ((2.0 * std::f64::consts::PI).sqrt() * norm_cdf(alpha));
        assert_relative_eq!(m, 1.0 - 2.0 * lambda, epsilon = 1e-10);
        let var = 4.0 * (1.0 - lambda * (lambda + alpha));
        assert_relative_eq!(s, var.sqrt(), epsilon = 1e-10);
        assert!(s > 0.0 && s < 2.0);
    }

    #[test]
    fn truncated_moments_match_quadrature() {
        // Independent oracle: numeric integration of the truncated density.
        let (mean, sd, upper) = (0.7, 1.3, 1.1);
        let alpha = (upper - mean) / sd;
        let z_mass = norm_cdf(alpha);
        let n = 400_000;
        let lo = mean - 12.0 * sd;
        let h = (upper - lo) / n as f64;
        let density = |x: f64| {
            ((-0.5 * ((x - mean) / sd).powi(2)).exp()
                / (sd * (2.0 * std::f64::consts::PI).sqrt()))
                / z_mass
        };
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            m1 += w * x * density(x) * h;
            m2 += w * x * x * density(x) * h;
        }
        let (m, s) = trunc_normal_upper_moments(mean, sd, upper);
        assert_relative_eq!(m, m1, epsilon = 1e-6);
        assert_relative_eq!(s, (m2 - m1 * m1).sqrt(), epsilon = 1e-6);
    }
}
