//! Covariance maps: elementwise functions ρ ↦ f(ρ) giving the covariance of
//! transformed treatments for two units whose latent Gaussians have
//! correlation ρ.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::elliptope::CorrelationFactor;
use crate::error::{domain, Result};
use crate::hermite::HermiteExpansion;
use crate::normal;
use crate::quadrature::{adaptive_legendre, fixed_legendre};

/// Largest |ρ| at which derivatives are evaluated; f′ diverges at ±1.
pub const DERIV_CLAMP: f64 = 1.0 - 1e-15;
pub const DEFAULT_GRID_SIZE: usize = 2001;
pub const DEFAULT_EDGE_MARGIN: f64 = 1e-6;
const QUAD_TOL: f64 = 1e-13;

/// Equal-probability thresholds q_i = Φ⁻¹(i/K), i = 1..K−1.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmQuantiles {
    pub k: usize,
    pub thresholds: Vec<f64>,
}

pub fn quantile_thresholds(k: usize) -> Result<ArmQuantiles> {
    if !(2..=64).contains(&k) {
        return domain(format!("number of arms must be in 2..=64, got {k}"));
    }
    let thresholds = (1..k).map(|i| normal::quantile(i as f64 / k as f64)).collect();
    Ok(ArmQuantiles { k, thresholds })
}

/// Arm index (1-based) of a latent draw: arm i iff t ∈ (q_{i−1}, q_i].
pub fn discretize(t: f64, q: &ArmQuantiles) -> Result<usize> {
    if t.is_nan() {
        return domain("cannot discretize NaN");
    }
    Ok(q.thresholds.partition_point(|&qi| qi < t) + 1)
}

/// Density of the standard bivariate normal, p_ρ(q_i, q_j).
pub fn p_rho(rho: f64, qi: f64, qj: f64) -> f64 {
    normal::bivariate_pdf(qi, qj, rho)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RectTerm {
    coef: f64,
    a: f64,
    b: f64,
}

impl RectTerm {
    /// Integrand of r(ρ) after substituting r = sin θ, and its θ-derivative.
    #[inline]
    fn integrand(&self, s: f64, c: f64) -> (f64, f64) {
        let (a, b) = (self.a, self.b);
        let (q, dq) = if a == b {
            let one_p = 1.0 + s;
            if one_p <= 0.0 {
                return (0.0, 0.0);
            }
            (a * a / one_p, -a * a * c / (one_p * one_p))
        } else {
            if c <= 0.0 {
                return (0.0, 0.0);
            }
            let num = a * a + b * b - 2.0 * a * b * s;
            (num / (2.0 * c * c), (-a * b * c * c + num * s) / (c * c * c))
        };
        let v = self.coef * (-q).exp() / (2.0 * PI);
        (v, -dq * v)
    }

    fn endpoint(&self, rho: f64) -> f64 {
        let (pa, pb) = (normal::cdf(self.a), normal::cdf(self.b));
        let joint = if rho > 0.0 {
            pa.min(pb)
        } else {
            (pa + pb - 1.0).max(0.0)
        };
        self.coef * (joint - pa * pb)
    }
}

fn rect_integrand(terms: &[RectTerm], theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    terms.iter().map(|t| t.integrand(s, c).0).sum()
}

fn rect_eval_direct(terms: &[RectTerm], rho: f64) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    if rho.abs() >= 1.0 {
        let r = rho.signum();
        return terms.iter().map(|t| t.endpoint(r)).sum();
    }
    let f = |th: f64| rect_integrand(terms, th);
    adaptive_legendre(&f, 0.0, rho.asin(), QUAD_TOL)
}

fn rect_deriv(terms: &[RectTerm], rho: f64) -> f64 {
    let r = rho.clamp(-DERIV_CLAMP, DERIV_CLAMP);
    terms.iter().map(|t| t.coef * p_rho(r, t.a, t.b)).sum()
}

/// Merges terms with the same (unordered) threshold pair and drops zeros.
fn merge_terms(raw: impl IntoIterator<Item = RectTerm>) -> Vec<RectTerm> {
    let mut out: Vec<RectTerm> = Vec::new();
    for mut t in raw {
        if t.a > t.b {
            std::mem::swap(&mut t.a, &mut t.b);
        }
        match out.iter_mut().find(|u| u.a == t.a && u.b == t.b) {
            Some(u) => u.coef += t.coef,
            None => out.push(t),
        }
    }
    out.retain(|t| t.coef != 0.0);
    out
}

/// Bivariate rectangle covariance r_ij(ρ) = ∫_0^ρ p_r(q_i, q_j) dr.
pub fn r_ij(rho: f64, qi: f64, qj: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&rho) {
        return domain(format!("correlation {rho} outside [-1, 1]"));
    }
    if !qi.is_finite() || !qj.is_finite() {
        return domain("thresholds must be finite");
    }
    Ok(rect_eval_direct(
        &[RectTerm {
            coef: 1.0,
            a: qi,
            b: qj,
        }],
        rho,
    ))
}

#[derive(Debug)]
enum MapKind {
    /// Σ coef·r(ρ; a, b).
    Rectangles(Vec<RectTerm>),
    /// Σ_{m≥1} coeffs[m]·ρ^m, with an estimate of the neglected tail energy.
    Series { coeffs: Vec<f64>, tail: f64 },
}

#[derive(Debug)]
struct Table {
    theta_lo: f64,
    h: f64,
    rho_lo: f64,
    rho_hi: f64,
    g: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
}

impl Table {
    fn interpolate(&self, rho: f64) -> f64 {
        let theta = rho.asin();
        let u = (theta - self.theta_lo) / self.h;
        let j = (u.floor() as usize).min(self.g.len() - 2);
        let t = u - j as f64;
        let h = self.h;
        let (p0, p1) = (self.g[j], self.g[j + 1]);
        let (m0, m1) = (h * self.g1[j], h * self.g1[j + 1]);
        let (a0, a1) = (h * h * self.g2[j], h * h * self.g2[j + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;
        let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
        let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
        let h3 = 0.5 * (t3 - 2.0 * t4 + t5);
        let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
        let h5 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
        p0 * h0 + m0 * h1 + a0 * h2 + a1 * h3 + m1 * h4 + p1 * h5
    }
}

/// An elementwise map f on [−1, 1] with derivative f′.
///
/// Cloning is cheap; clones share the underlying terms and table.
#[derive(Clone)]
pub struct CovarianceMap {
    kind: Arc<MapKind>,
    label: String,
    table: Option<Arc<Table>>,
}

impl fmt::Debug for CovarianceMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CovarianceMap")
            .field("label", &self.label)
            .field("tabulated", &self.table.is_some())
            .finish()
    }
}

impl CovarianceMap {
    fn rectangles(label: impl Into<String>, terms: Vec<RectTerm>) -> Self {
        CovarianceMap {
            kind: Arc::new(MapKind::Rectangles(terms)),
            label: label.into(),
            table: None,
        }
    }

    /// f(ρ) = Σ_{m≥1} α_m² ρ^m from a Hermite expansion (α_0 is ignored).
    pub fn from_expansion(label: impl Into<String>, e: &HermiteExpansion) -> Self {
        let mut coeffs: Vec<f64> = e.coeffs.iter().map(|a| a * a).collect();
        coeffs[0] = 0.0;
        CovarianceMap {
            kind: Arc::new(MapKind::Series {
                coeffs,
                tail: e.tail_sq,
            }),
            label: label.into(),
            table: None,
        }
    }

    /// f(ρ) = Σ_{m≥1} c_m ρ^m for explicit coefficients `c[m]` (c[0] ignored).
    pub fn power_series(label: impl Into<String>, mut c: Vec<f64>) -> Self {
        if c.is_empty() {
            c.push(0.0);
        }
        c[0] = 0.0;
        CovarianceMap {
            kind: Arc::new(MapKind::Series { coeffs: c, tail: 0.0 }),
            label: label.into(),
            table: None,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_tabulated(&self) -> bool {
        self.table.is_some()
    }

    /// f(ρ), with ρ clamped to [−1, 1].
    pub fn eval(&self, rho: f64) -> f64 {
        let rho = rho.clamp(-1.0, 1.0);
        if rho == 0.0 {
            return 0.0;
        }
        if let Some(t) = &self.table {
            if rho >= t.rho_lo && rho <= t.rho_hi {
                return t.interpolate(rho);
            }
        }
        self.eval_direct(rho)
    }

    /// f(ρ) without the table.
    pub fn eval_direct(&self, rho: f64) -> f64 {
        let rho = rho.clamp(-1.0, 1.0);
        match &*self.kind {
            MapKind::Rectangles(terms) => rect_eval_direct(terms, rho),
            MapKind::Series { coeffs, .. } => coeffs.iter().rev().fold(0.0, |acc, &c| acc * rho + c),
        }
    }

    /// f′(ρ); for quadrature-defined maps ρ is clamped to ±(1 − 1e-15).
    pub fn deriv(&self, rho: f64) -> f64 {
        match &*self.kind {
            MapKind::Rectangles(terms) => rect_deriv(terms, rho),
            MapKind::Series { coeffs, .. } => {
                let rho = rho.clamp(-1.0, 1.0);
                let mut acc = 0.0;
                for (m, &c) in coeffs.iter().enumerate().skip(1).rev() {
                    acc = acc * rho + m as f64 * c;
                }
                acc
            }
        }
    }

    /// Bound on the truncation error of a series map at ρ; zero for
    /// quadrature-defined maps.
    pub fn tail_bound(&self, rho: f64) -> f64 {
        match &*self.kind {
            MapKind::Rectangles(_) => 0.0,
            MapKind::Series { coeffs, tail } => {
                let r = rho.abs().min(1.0);
                if *tail == 0.0 || r == 0.0 {
                    return 0.0;
                }
                let m = coeffs.len() as i32;
                if r >= 1.0 {
                    *tail
                } else {
                    (tail * r.powi(m) / (1.0 - r)).min(*tail)
                }
            }
        }
    }
}

fn arm_map_terms(q: &ArmQuantiles, k: usize, l: usize) -> Vec<RectTerm> {
    let kk = q.k;
    let th = |i: usize| q.thresholds[i - 1];
    let mut raw = Vec::new();
    for (i, j, sign) in [(k - 1, l - 1, 1.0), (k, l, 1.0), (k - 1, l, -1.0), (k, l - 1, -1.0)] {
        if i == 0 || j == 0 || i == kk || j == kk {
            continue;
        }
        raw.push(RectTerm {
            coef: sign,
            a: th(i),
            b: th(j),
        });
    }
    merge_terms(raw)
}

fn check_arm(k: usize, arms: usize) -> Result<()> {
    if k == 0 || k > arms {
        return domain(format!("arm index {k} outside 1..={arms}"));
    }
    Ok(())
}

/// f_k: covariance of the arm-k indicators of two units.
pub fn f_arm(arms: usize, k: usize) -> Result<CovarianceMap> {
    let q = quantile_thresholds(arms)?;
    check_arm(k, arms)?;
    Ok(CovarianceMap::rectangles(
        format!("f_arm(K={arms},k={k})"),
        arm_map_terms(&q, k, k),
    ))
}

/// f_k′(ρ) for |ρ| < 1.
pub fn f_arm_prime(arms: usize, k: usize, rho: f64) -> Result<f64> {
    if rho.is_nan() || rho.abs() >= 1.0 {
        return domain(format!("derivative requested at |rho| = {} >= 1", rho.abs()));
    }
    Ok(f_arm(arms, k)?.deriv(rho))
}

/// f_{k,l}: covariance of the arm-k indicator of one unit with the arm-l
/// indicator of another.
pub fn f_cross(arms: usize, k: usize, l: usize) -> Result<CovarianceMap> {
    let q = quantile_thresholds(arms)?;
    check_arm(k, arms)?;
    check_arm(l, arms)?;
    Ok(CovarianceMap::rectangles(
        format!("f_cross(K={arms},k={k},l={l})"),
        arm_map_terms(&q, k, l),
    ))
}

/// Σ_k w_k² f_k.
pub fn weighted_discrete_map(w: &[f64], arms: usize) -> Result<CovarianceMap> {
    if w.len() != arms {
        return crate::error::shape(format!("{} weights for {arms} arms", w.len()));
    }
    if w.iter().any(|x| !x.is_finite()) {
        return domain("arm weights must be finite");
    }
    let q = quantile_thresholds(arms)?;
    let raw = w.iter().enumerate().flat_map(|(i, wk)| {
        arm_map_terms(&q, i + 1, i + 1).into_iter().map(move |t| RectTerm {
            coef: t.coef * wk * wk,
            ..t
        })
    });
    Ok(CovarianceMap::rectangles(
        format!("weighted(K={arms})"),
        merge_terms(raw.collect::<Vec<_>>()),
    ))
}

/// Tabulates a quadrature-defined map on a grid uniform in θ = asin ρ over
/// [−1 + margin, 1 − margin] (Chebyshev spacing in ρ), interpolated by
/// quintic Hermite polynomials in θ. Series maps are returned unchanged.
pub fn build_table(map: &CovarianceMap, grid_size: usize, edge_margin: f64) -> Result<CovarianceMap> {
    if grid_size < 64 {
        return domain(format!("table grid size must be at least 64, got {grid_size}"));
    }
    if !(edge_margin > 0.0 && edge_margin < 0.5) {
        return domain(format!("edge margin {edge_margin} outside (0, 0.5)"));
    }
    let terms = match &*map.kind {
        MapKind::Rectangles(t) => t.clone(),
        MapKind::Series { .. } => return Ok(map.clone()),
    };
    let theta_hi = (1.0 - edge_margin).asin();
    let theta_lo = -theta_hi;
    let h = (theta_hi - theta_lo) / (grid_size - 1) as f64;
    let thetas: Vec<f64> = (0..grid_size).map(|j| theta_lo + h * j as f64).collect();

    let mut g1 = Vec::with_capacity(grid_size);
    let mut g2 = Vec::with_capacity(grid_size);
    for &th in &thetas {
        let (s, c) = th.sin_cos();
        let (v, d) = terms
            .iter()
            .map(|t| t.integrand(s, c))
            .fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
        g1.push(v);
        g2.push(d);
    }

    let f = |th: f64| rect_integrand(&terms, th);
    let mid = grid_size / 2;
    let mut g = vec![0.0; grid_size];
    g[mid] = rect_eval_direct(&terms, thetas[mid].sin());
    for j in mid + 1..grid_size {
        g[j] = g[j - 1] + fixed_legendre(&f, thetas[j - 1], thetas[j], 20);
    }
    for j in (0..mid).rev() {
        g[j] = g[j + 1] - fixed_legendre(&f, thetas[j], thetas[j + 1], 20);
    }

    let table = Table {
        theta_lo,
        h,
        rho_lo: theta_lo.sin(),
        rho_hi: theta_hi.sin(),
        g,
        g1,
        g2,
    };
    Ok(CovarianceMap {
        kind: map.kind.clone(),
        label: map.label.clone(),
        table: Some(Arc::new(table)),
    })
}

/// Tabulates with the default grid size and edge margin.
pub fn tabulate(map: &CovarianceMap) -> CovarianceMap {
    build_table(map, DEFAULT_GRID_SIZE, DEFAULT_EDGE_MARGIN).expect("default table parameters are valid")
}

fn elementwise(gram: &DMatrix<f64>, diag: f64, f: impl Fn(f64) -> f64 + Sync) -> DMatrix<f64> {
    let n = gram.nrows();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            (0..n)
                .map(|i| if i == j { diag } else { f(gram[(i, j)].clamp(-1.0, 1.0)) })
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}

/// f applied entrywise to Σ = VVᵀ; the diagonal is f(1).
pub fn apply_map(map: &CovarianceMap, factor: &CorrelationFactor) -> DMatrix<f64> {
    apply_map_to_matrix(map, &factor.gram())
}

/// f applied entrywise to a correlation matrix (entries clamped to [−1, 1],
/// diagonal evaluated at exactly 1).
pub fn apply_map_to_matrix(map: &CovarianceMap, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    elementwise(sigma, map.eval(1.0), |r| map.eval(r))
}

/// f′ applied entrywise off the diagonal; the diagonal is zero.
pub fn apply_deriv_to_matrix(map: &CovarianceMap, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    elementwise(sigma, 0.0, |r| map.deriv(r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds() {
        assert_eq!(quantile_thresholds(2).unwrap().thresholds, vec![0.0]);
        let q3 = quantile_thresholds(3).unwrap().thresholds;
        assert!((q3[0] + 0.430_727_299_295_457_5).abs() < 1e-12);
        assert!((q3[1] - 0.430_727_299_295_457_5).abs() < 1e-12);
        let q4 = quantile_thresholds(4).unwrap().thresholds;
        assert!((q4[0] + 0.674_489_750_196_081_7).abs() < 1e-12);
        assert!(q4[1].abs() < 1e-15);
        assert!(quantile_thresholds(1).is_err());
        assert!(quantile_thresholds(65).is_err());
    }

    #[test]
    fn discretize_examples() {
        let q3 = quantile_thresholds(3).unwrap();
        let q2 = quantile_thresholds(2).unwrap();
        assert_eq!(discretize(-5.0, &q3).unwrap(), 1);
        assert_eq!(discretize(0.0, &q2).unwrap(), 1);
        assert_eq!(discretize(0.431, &q3).unwrap(), 3);
        assert_eq!(discretize(q3.thresholds[1], &q3).unwrap(), 2);
        assert!(discretize(f64::NAN, &q3).is_err());
    }

    #[test]
    fn rectangle_examples() {
        assert_eq!(r_ij(0.0, 0.3, -0.2).unwrap(), 0.0);
        assert!((r_ij(0.5, 0.0, 0.0).unwrap() - 1.0 / 12.0).abs() < 1e-12);
        assert!((r_ij(1.0, 0.0, 0.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(r_ij(1.01, 0.0, 0.0).is_err());
    }

    #[test]
    fn rectangle_matches_orthant_formula_near_edges() {
        for &rho in &[-0.999_999f64, -0.99, -0.3, 0.7, 0.999_999_9] {
            let want = rho.asin() / (2.0 * PI);
            assert!((r_ij(rho, 0.0, 0.0).unwrap() - want).abs() < 1e-11, "rho = {rho}");
        }
    }

    #[test]
    fn rectangle_continuous_at_endpoints() {
        let (a, b) = (-0.43, 0.9);
        for &sign in &[1.0, -1.0] {
            let end = r_ij(sign, a, b).unwrap();
            let near = r_ij(sign * (1.0 - 1e-12), a, b).unwrap();
            assert!((end - near).abs() < 1e-5, "{end} vs {near}");
        }
    }

    #[test]
    fn arm_map_examples() {
        assert!((f_arm(3, 1).unwrap().eval(1.0) - 2.0 / 9.0).abs() < 1e-12);
        assert!((f_arm(2, 1).unwrap().eval(0.5) - 1.0 / 12.0).abs() < 1e-12);
        assert_eq!(f_arm(3, 2).unwrap().eval(0.0), 0.0);
        assert!((f_arm_prime(2, 1, 0.0).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        let q1 = -0.430_727_299_295_457_5;
        assert!((f_arm_prime(3, 1, 0.0).unwrap() - normal::pdf(q1).powi(2)).abs() < 1e-14);
        assert!(f_arm_prime(3, 1, 1.0).is_err());
        assert!(f_arm(3, 4).is_err());
        assert!(f_arm(3, 0).is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for arms in 2..=5 {
            for k in 1..=arms {
                let f = f_arm(arms, k).unwrap();
                let h = 1e-5;
                let fd = (f.eval_direct(0.3 + h) - f.eval_direct(0.3 - h)) / (2.0 * h);
                assert!((fd - f.deriv(0.3)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cross_map_examples() {
        assert!((f_cross(2, 1, 2).unwrap().eval(1.0) + 0.25).abs() < 1e-15);
        for k in 1..=3 {
            for l in 1..=3 {
                assert_eq!(f_cross(3, k, l).unwrap().eval(0.0), 0.0);
            }
        }
    }

    #[test]
    fn cross_rows_sum_to_zero() {
        for arms in 2..=5 {
            let maps: Vec<Vec<CovarianceMap>> = (1..=arms)
                .map(|k| (1..=arms).map(|l| f_cross(arms, k, l).unwrap()).collect())
                .collect();
            for row in &maps {
                for &rho in &[-1.0, -0.7, 0.2, 0.95, 1.0] {
                    let s: f64 = row.iter().map(|m| m.eval(rho)).sum();
                    assert!(s.abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn derivative_integrates_back_to_map() {
        let f = f_arm(4, 2).unwrap();
        for &rho in &[-0.99, -0.5, 0.4, 0.99] {
            let g = |r: f64| f.deriv(r);
            let integral = adaptive_legendre(&g, 0.0, rho, 1e-12);
            assert!((integral - f.eval(rho)).abs() < 1e-7);
        }
    }

    #[test]
    fn weighted_map_examples() {
        let third = 1.0 / 3.0;
        let w = weighted_discrete_map(&[third, third, third], 3).unwrap();
        assert!((w.eval(1.0) - 2.0 / 27.0).abs() < 1e-12);
        assert_eq!(w.eval(0.0), 0.0);
        let w = weighted_discrete_map(&[1.0, 0.0], 2).unwrap();
        let f = f_arm(2, 1).unwrap();
        for j in 0..=100 {
            let rho = -1.0 + 0.02 * j as f64;
            assert!((w.eval(rho) - f.eval(rho)).abs() < 1e-15);
        }
        assert!(weighted_discrete_map(&[1.0], 2).is_err());
    }

    #[test]
    fn binary_map_is_nondecreasing() {
        let f = f_arm(2, 1).unwrap();
        let mut prev = f.eval(-1.0);
        for j in 1..=200 {
            let v = f.eval(-1.0 + 0.01 * j as f64);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn table_matches_direct() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for (arms, k) in [(3, 1), (3, 2), (5, 1), (2, 1)] {
            let f = f_arm(arms, k).unwrap();
            let t = tabulate(&f);
            assert!(t.is_tabulated());
            let mut worst: f64 = 0.0;
            for _ in 0..101 {
                let rho: f64 = rng.random_range(-1.0..1.0);
                worst = worst.max((t.eval(rho) - f.eval_direct(rho)).abs());
            }
            assert!(worst < 1e-8, "K={arms} k={k}: {worst}");
            assert_eq!(t.eval(1.0), f.eval_direct(1.0));
            assert_eq!(t.eval(0.0), 0.0);
        }
        assert!(build_table(&f_arm(3, 1).unwrap(), 10, 1e-6).is_err());
    }

    #[test]
    fn apply_map_examples() {
        let f = f_arm(3, 1).unwrap();
        let id = CorrelationFactor::identity(3);
        let m = apply_map(&f, &id);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { f.eval(1.0) } else { 0.0 };
                assert_eq!(m[(i, j)], want);
            }
        }
        let v = DMatrix::from_row_slice(2, 2, &[0.6, 0.8, 0.6, 0.8]);
        let same = CorrelationFactor::from_rows(v).unwrap();
        let m = apply_map(&f, &same);
        assert!(m.iter().all(|&x| (x - f.eval(1.0)).abs() < 1e-12));
    }

    #[test]
    fn apply_map_random_factor_matches_scalar_path() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let v = DMatrix::from_fn(5, 5, |_, _| {
            rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng)
        });
        let fac = CorrelationFactor::normalized(v);
        let f = tabulate(&f_arm(3, 2).unwrap());
        let m = apply_map(&f, &fac);
        let g = fac.gram();
        for i in 0..5 {
            for j in 0..5 {
                let r = if i == j { 1.0 } else { g[(i, j)] };
                assert!((m[(i, j)] - f.eval(r)).abs() < 1e-12);
            }
        }
    }
}
