//! Gauss–Legendre and Gauss–Hermite rules plus a simple adaptive integrator.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a quadrature rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// n-point Gauss–Legendre rule on [−1, 1].
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn legendre_cached(n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard.entry(n).or_insert_with(|| Arc::new(gauss_legendre(n))).clone()
}

/// Integral of `f` over [a, b] with a fixed n-point Gauss–Legendre rule.
pub fn fixed_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
    let rule = legendre_cached(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Adaptive Gauss–Legendre integration by bisection.
///
/// A panel is accepted when its 10- and 20-point estimates differ by less than
/// its share of `tol`.
pub fn adaptive_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let total_len = (b - a).abs();
    adaptive_panel(f, a, b, tol, total_len, 0)
}

fn adaptive_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, total_len: f64, depth: usize) -> f64 {
    let coarse = fixed_legendre(f, a, b, 10);
    let fine = fixed_legendre(f, a, b, 20);
    let share = tol * (b - a).abs() / total_len;
    if (fine - coarse).abs() <= share.max(1e-300) || depth >= 40 {
        return fine;
    }
    let mid = 0.5 * (a + b);
    adaptive_panel(f, a, mid, tol, total_len, depth + 1) + adaptive_panel(f, mid, b, tol, total_len, depth + 1)
}

/// n-point Gauss–Hermite rule for the standard normal weight φ, so that
/// Σ wᵢ g(xᵢ) ≈ E[g(Z)]. Weights sum to one.
///
/// Initial nodes come from the Golub–Welsch eigenproblem; they are then
/// polished by Newton steps on the orthonormal recurrence and the weights
/// are taken from the Christoffel function, which stays accurate for the
/// tiny weights in the tails.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1);
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64).sqrt();
        jacobi[(i, i - 1)] = b;
        jacobi[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut weights = vec![0.0; n];
    for (x, w) in nodes.iter_mut().zip(weights.iter_mut()) {
        for _ in 0..6 {
            let (hn, hn1) = orthonormal_top(n, *x);
            let deriv = (n as f64).sqrt() * hn1;
            if deriv == 0.0 {
                break;
            }
            let dx = hn / deriv;
            *x -= dx;
            if dx.abs() < 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
        let mut sum = 0.0;
        let mut h_prev = 0.0;
        let mut h = 1.0;
        for m in 0..n {
            sum += h * h;
            let next = (*x * h - (m as f64).sqrt() * h_prev) / ((m + 1) as f64).sqrt();
            h_prev = h;
            h = next;
        }
        *w = 1.0 / sum;
    }
    // Symmetrize to remove eigensolver asymmetry.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

/// Returns (h_n(x), h_{n−1}(x)) for the orthonormal Hermite polynomials.
fn orthonormal_top(n: usize, x: f64) -> (f64, f64) {
    let mut h_prev = 0.0;
    let mut h = 1.0;
    for m in 0..n {
        let next = (x * h - (m as f64).sqrt() * h_prev) / ((m + 1) as f64).sqrt();
        h_prev = h;
        h = next;
    }
    (h, h_prev)
}

/// Cached Gauss–Hermite rule.
pub fn gauss_hermite_cached(n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard.entry(n).or_insert_with(|| Arc::new(gauss_hermite(n))).clone()
}
