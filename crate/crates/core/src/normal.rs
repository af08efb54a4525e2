//! Standard normal density, distribution and quantile functions.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// 1/√(2π)
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density φ(x).
#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function Φ(x).
#[inline]
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Inverse of Φ. Returns ±∞ at the endpoints and NaN outside [0, 1].
///
/// The erfc-inverse starting value is polished by Newton steps on Φ.
pub fn quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    // Newton steps on Φ(x) − p, evaluated through whichever tail keeps
    // relative precision.
    for _ in 0..2 {
        let dens = pdf(x);
        if dens <= 1e-300 {
            break;
        }
        let err = if x < 0.0 {
            cdf(x) - p
        } else {
            (1.0 - p) - 0.5 * erfc(x * FRAC_1_SQRT_2)
        };
        x -= err / dens;
    }
    x
}

/// Density of the standard bivariate normal with correlation `rho` at (x, y).
///
/// Requires |rho| < 1.
#[inline]
pub fn bivariate_pdf(x: f64, y: f64, rho: f64) -> f64 {
    let one_m = 1.0 - rho * rho;
    let q = (x * x + y * y - 2.0 * rho * x * y) / (2.0 * one_m);
    (-q).exp() / (2.0 * PI * one_m.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[
            1e-10,
            1e-4,
            0.01,
            0.1,
            1.0 / 3.0,
            0.5,
            2.0 / 3.0,
            0.9,
            0.999,
            1.0 - 1e-9,
        ] {
            let x = quantile(p);
            assert!((cdf(x) - p).abs() < 1e-15 * p.max(1e-3) + 1e-17, "p = {p}");
        }
        assert_eq!(quantile(0.5), 0.0);
    }

    #[test]
    fn reference_quantiles() {
        // Published tables: z_{0.975}, z_{0.999}, Φ⁻¹(1/3).
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-13);
        assert!((quantile(0.999) - 3.090_232_306_167_813_5).abs() < 1e-12);
        assert!((quantile(1.0 / 3.0) + 0.430_727_299_295_457_5).abs() < 1e-13);
    }

    #[test]
    fn endpoints() {
        assert_eq!(quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(quantile(1.0), f64::INFINITY);
        assert!(quantile(1.5).is_nan());
        assert_eq!(cdf(f64::INFINITY), 1.0);
    }

    #[test]
    fn bivariate_density_at_origin() {
        assert!((bivariate_pdf(0.0, 0.0, 0.0) - 1.0 / (2.0 * PI)).abs() < 1e-16);
        let q = -0.430_727_299_295_457_5;
        assert!((bivariate_pdf(q, q, 0.0) - pdf(q) * pdf(q)).abs() < 1e-16);
    }
}
