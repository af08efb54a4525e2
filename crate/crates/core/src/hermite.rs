//! Hermite polynomials, Hermite coefficients and Mehler series.

use std::fmt;
use std::sync::Arc;

use crate::covmap::CovarianceMap;
use crate::error::{domain, Error, Result};
use crate::normal;
use crate::quadrature::gauss_hermite_cached;

/// Highest polynomial order accepted by the recurrences.
pub const MAX_ORDER: usize = 200;
/// Default truncation order of Hermite expansions.
pub const DEFAULT_TRUNCATION: usize = 50;
/// Default number of Gauss–Hermite nodes.
pub const DEFAULT_NODES: usize = 200;

pub type SmoothFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A scalar function of a standard normal argument.
#[derive(Clone)]
pub enum ScalarFunction {
    /// Evaluated pointwise at quadrature nodes.
    Smooth(SmoothFn),
    /// The indicator t ↦ 1{t ≤ q}; its coefficients have a closed form.
    ThresholdIndicator(f64),
}

impl ScalarFunction {
    pub fn smooth(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFunction::Smooth(Arc::new(f))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ScalarFunction::Smooth(f) => f(x),
            ScalarFunction::ThresholdIndicator(q) => {
                if x <= *q {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Debug for ScalarFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFunction::Smooth(_) => f.write_str("Smooth(..)"),
            ScalarFunction::ThresholdIndicator(q) => write!(f, "ThresholdIndicator({q})"),
        }
    }
}

/// Coefficients α_0..α_M of a function in the normalized Hermite basis.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteExpansion {
    pub coeffs: Vec<f64>,
    /// Σ α_m² over the stored coefficients.
    pub l2_norm_sq: f64,
    /// Estimate of Σ_{m>M} α_m², i.e. E[g(Z)²] minus the stored energy.
    pub tail_sq: f64,
}

impl HermiteExpansion {
    pub fn new(coeffs: Vec<f64>, tail_sq: f64) -> Self {
        let l2_norm_sq = coeffs.iter().map(|a| a * a).sum();
        HermiteExpansion {
            coeffs,
            l2_norm_sq,
            tail_sq: tail_sq.max(0.0),
        }
    }

    pub fn truncation(&self) -> usize {
        self.coeffs.len() - 1
    }
}

fn check_order(m: usize) -> Result<()> {
    if m > MAX_ORDER {
        return Err(Error::Range(format!(
            "Hermite order {m} exceeds the supported maximum {MAX_ORDER}"
        )));
    }
    Ok(())
}

/// Probabilists' Hermite polynomial He_m(x).
pub fn hermite_poly(m: usize, x: f64) -> Result<f64> {
    check_order(m)?;
    let mut prev = 0.0;
    let mut cur = 1.0;
    for j in 0..m {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Normalized Hermite polynomial h_m(x) = He_m(x)/√(m!).
pub fn normalized_hermite(m: usize, x: f64) -> Result<f64> {
    check_order(m)?;
    Ok(normalized_table(m, x)[m])
}

/// h_0(x), …, h_m(x) via the orthonormal recurrence.
fn normalized_table(m: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(m + 1);
    let mut prev = 0.0;
    let mut cur = 1.0;
    out.push(cur);
    for j in 0..m {
        let next = (x * cur - (j as f64).sqrt() * prev) / ((j + 1) as f64).sqrt();
        prev = cur;
        cur = next;
        out.push(cur);
    }
    out
}

/// Hermite coefficients α_0..α_M of `g`.
///
/// Smooth functions use an `nodes`-point Gauss–Hermite rule; threshold
/// indicators use α_0 = Φ(q), α_m = −φ(q) h_{m−1}(q)/√m.
pub fn hermite_coeffs(g: &ScalarFunction, m: usize, nodes: usize) -> Result<HermiteExpansion> {
    check_order(m)?;
    match g {
        ScalarFunction::ThresholdIndicator(q) => {
            if !q.is_finite() {
                return domain(format!("threshold must be finite, got {q}"));
            }
            let h = normalized_table(m, *q);
            let dens = normal::pdf(*q);
            let mut coeffs = Vec::with_capacity(m + 1);
            coeffs.push(normal::cdf(*q));
            for j in 1..=m {
                coeffs.push(-dens * h[j - 1] / (j as f64).sqrt());
            }
            let energy: f64 = coeffs.iter().map(|a| a * a).sum();
            Ok(HermiteExpansion::new(coeffs, normal::cdf(*q) - energy))
        }
        ScalarFunction::Smooth(f) => {
            if nodes < 2 * (m + 1) {
                return domain(format!(
                    "{nodes} quadrature nodes cannot resolve truncation order {m}; need at least {}",
                    2 * (m + 1)
                ));
            }
            let rule = gauss_hermite_cached(nodes);
            let mut coeffs = vec![0.0; m + 1];
            let mut second_moment = 0.0;
            for (idx, (&x, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
                let v = f(x);
                if !v.is_finite() {
                    return Err(Error::Evaluation { index: idx, node: x });
                }
                let wv = w * v;
                second_moment += wv * v;
                let mut prev = 0.0;
                let mut cur = 1.0;
                for (j, c) in coeffs.iter_mut().enumerate() {
                    *c += wv * cur;
                    let next = (x * cur - (j as f64).sqrt() * prev) / ((j + 1) as f64).sqrt();
                    prev = cur;
                    cur = next;
                }
            }
            let energy: f64 = coeffs.iter().map(|a| a * a).sum();
            Ok(HermiteExpansion::new(coeffs, second_moment - energy))
        }
    }
}

/// Σ_{m=1}^{M} α_m[a] α_m[b] ρ^m, the covariance of a(X) and b(Y) under a
/// standard bivariate normal with correlation ρ (truncated).
pub fn mehler_series(a: &HermiteExpansion, b: &HermiteExpansion, rho: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&rho) {
        return domain(format!("correlation {rho} outside [-1, 1]"));
    }
    let m = a.coeffs.len().min(b.coeffs.len());
    let mut acc = 0.0;
    let mut pow = 1.0;
    for j in 1..m {
        pow *= rho;
        acc += a.coeffs[j] * b.coeffs[j] * pow;
    }
    Ok(acc)
}

/// Covariance maps for a continuous-treatment design with weight w and
/// baseline response Y₀.
#[derive(Debug, Clone)]
pub struct ContinuousCovMaps {
    /// ρ ↦ Cov(Y₀(X)w(X), Y₀(Y)w(Y)).
    pub map_y0w: CovarianceMap,
    /// ρ ↦ Cov(w(X), w(Y)).
    pub map_w: CovarianceMap,
    pub expansion_y0w: HermiteExpansion,
    pub expansion_w: HermiteExpansion,
}

pub fn continuous_cov_maps(
    y0: impl Fn(f64) -> f64 + Send + Sync + 'static,
    w: impl Fn(f64) -> f64 + Send + Sync + 'static,
    m: usize,
    nodes: usize,
) -> Result<ContinuousCovMaps> {
    let w: SmoothFn = Arc::new(w);
    let w2 = w.clone();
    let product = ScalarFunction::smooth(move |t| y0(t) * w2(t));
    let expansion_y0w = hermite_coeffs(&product, m, nodes)?;
    let expansion_w = hermite_coeffs(&ScalarFunction::Smooth(w), m, nodes)?;
    Ok(ContinuousCovMaps {
        map_y0w: CovarianceMap::from_expansion("f_y0w", &expansion_y0w),
        map_w: CovarianceMap::from_expansion("f_w", &expansion_w),
        expansion_y0w,
        expansion_w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_hermite;

    fn factorial(m: usize) -> f64 {
        (1..=m).map(|j| j as f64).product()
    }

    #[test]
    fn polynomial_values() {
        assert_eq!(hermite_poly(0, 7.3).unwrap(), 1.0);
        assert_eq!(hermite_poly(2, 2.0).unwrap(), 3.0);
        assert_eq!(hermite_poly(3, 1.0).unwrap(), -2.0);
        assert!((normalized_hermite(2, 2.0).unwrap() - 3.0 / 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(normalized_hermite(0, 0.0).unwrap(), 1.0);
        assert!((normalized_hermite(4, 0.0).unwrap() - 3.0 / 24f64.sqrt()).abs() < 1e-14);
        assert!(matches!(hermite_poly(201, 0.0), Err(Error::Range(_))));
    }

    #[test]
    fn normalized_matches_unnormalized_ratio() {
        for m in 0..30 {
            let x = 1.3;
            let direct = hermite_poly(m, x).unwrap() / factorial(m).sqrt();
            let via = normalized_hermite(m, x).unwrap();
            assert!((direct - via).abs() < 1e-10 * direct.abs().max(1.0), "m = {m}");
        }
    }

    #[test]
    fn orthonormality() {
        let r = gauss_hermite(200);
        for m in 0..=20 {
            for k in 0..=20 {
                let s: f64 = r
                    .nodes
                    .iter()
                    .zip(&r.weights)
                    .map(|(&x, &w)| w * normalized_hermite(m, x).unwrap() * normalized_hermite(k, x).unwrap())
                    .sum();
                let want = if m == k { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-10, "({m},{k}) -> {s}");
            }
        }
    }

    #[test]
    fn coefficients_of_polynomials() {
        let id = hermite_coeffs(&ScalarFunction::smooth(|t| t), 5, 200).unwrap();
        for (m, a) in id.coeffs.iter().enumerate() {
            let want = if m == 1 { 1.0 } else { 0.0 };
            assert!((a - want).abs() < 1e-12);
        }
        let sq = hermite_coeffs(&ScalarFunction::smooth(|t| t * t - 1.0), 5, 200).unwrap();
        for (m, a) in sq.coeffs.iter().enumerate() {
            let want = if m == 2 { 2f64.sqrt() } else { 0.0 };
            assert!((a - want).abs() < 1e-12);
        }
        assert!((sq.l2_norm_sq - 2.0).abs() < 1e-12);
    }

    #[test]
    fn indicator_closed_form_matches_brute_force() {
        let ind = hermite_coeffs(&ScalarFunction::ThresholdIndicator(0.0), 1, 4).unwrap();
        assert!((ind.coeffs[1] + normal::pdf(0.0)).abs() < 1e-15);
        // Brute force: ∫_{−∞}^{q} h_m(z) φ(z) dz by adaptive quadrature.
        let q = -0.43;
        let closed = hermite_coeffs(&ScalarFunction::ThresholdIndicator(q), 8, 0).unwrap();
        for m in 0..=8 {
            let f = |z: f64| normalized_hermite(m, z).unwrap() * normal::pdf(z);
            let brute = crate::quadrature::adaptive_legendre(&f, -40.0, q, 1e-14);
            assert!((closed.coeffs[m] - brute).abs() < 1e-12, "m = {m}");
        }
    }

    #[test]
    fn mehler_examples() {
        let id = hermite_coeffs(&ScalarFunction::smooth(|t| t), 5, 200).unwrap();
        assert!((mehler_series(&id, &id, 0.7).unwrap() - 0.7).abs() < 1e-12);
        let sq = hermite_coeffs(&ScalarFunction::smooth(|t| t * t - 1.0), 5, 200).unwrap();
        assert!((mehler_series(&sq, &sq, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(mehler_series(&sq, &id, 0.0).unwrap(), 0.0);
        assert!(mehler_series(&sq, &id, 1.2).is_err());
    }

    #[test]
    fn mehler_agrees_with_tensor_quadrature() {
        // Cov(g(X), h(Y)) with Y = ρX + √(1−ρ²)Z, computed by 2-D Gauss–Hermite.
        let g = |t: f64| (0.7 * t).sin() + 0.2 * t * t;
        let h = |t: f64| (0.3 * t).exp();
        let ga = hermite_coeffs(&ScalarFunction::smooth(g), 50, 200).unwrap();
        let ha = hermite_coeffs(&ScalarFunction::smooth(h), 50, 200).unwrap();
        let r = gauss_hermite(80);
        for &rho in &[-0.9, -0.4, 0.0, 0.6, 0.9] {
            let s = (1.0f64 - rho * rho).sqrt();
            let (mut eg, mut eh, mut egh) = (0.0, 0.0, 0.0);
            for (&x, &wx) in r.nodes.iter().zip(&r.weights) {
                eg += wx * g(x);
                for (&z, &wz) in r.nodes.iter().zip(&r.weights) {
                    let y = rho * x + s * z;
                    egh += wx * wz * g(x) * h(y);
                    eh += wx * wz * h(y);
                }
            }
            let cov = egh - eg * eh;
            let m = mehler_series(&ga, &ha, rho).unwrap();
            assert!((cov - m).abs() < 1e-6, "rho = {rho}: {cov} vs {m}");
        }
    }

    #[test]
    fn continuous_maps_examples() {
        let maps = continuous_cov_maps(|_| 1.0, |t| t, 50, 200).unwrap();
        for &rho in &[-0.9, 0.3, 1.0] {
            assert!((maps.map_w.eval(rho) - rho).abs() < 1e-12);
            assert!((maps.map_y0w.eval(rho) - rho).abs() < 1e-12);
        }
        assert_eq!(maps.map_w.eval(0.0), 0.0);

        let c = continuous_cov_maps(|_| 1.0, |t| t * t - 1.0, 50, 200).unwrap();
        assert!((c.map_w.eval(0.6) - 2.0 * 0.36).abs() < 1e-11);

        let lin = continuous_cov_maps(|t| -t / 250.0 + 1.0, |t| t, 50, 200).unwrap();
        // Brute-force oracle: Y₀(t)·t = t − t²/250 has α_1 = 1, α_2 = −√2/250.
        let rho: f64 = 0.4;
        let want = rho + 2.0 * rho * rho / 250.0f64.powi(2);
        assert!((lin.map_y0w.eval(rho) - want).abs() < 1e-12);
    }

    #[test]
    fn continuous_map_derivatives_match_finite_differences() {
        let c = continuous_cov_maps(|t| (0.5 * t).cos(), |t| t * t - 1.0 + 0.1 * t, 50, 200).unwrap();
        for map in [&c.map_w, &c.map_y0w] {
            for &rho in &[-0.9, -0.5, 0.0, 0.5, 0.9] {
                let h = 1e-5;
                let fd = (map.eval(rho + h) - map.eval(rho - h)) / (2.0 * h);
                let an = map.deriv(rho);
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{rho}: {fd} vs {an}");
            }
            for j in 0..=20 {
                assert!(map.eval(j as f64 / 20.0) >= 0.0);
            }
        }
    }

    #[test]
    fn evaluation_error_names_node() {
        let bad = ScalarFunction::smooth(|t| if t > 5.0 { f64::NAN } else { t });
        match hermite_coeffs(&bad, 3, 40) {
            Err(Error::Evaluation { node, .. }) => assert!(node > 5.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(hermite_coeffs(&ScalarFunction::smooth(|t| t), 50, 60).is_err());
    }
}
