//! Projected gradient descent on the correlation elliptope.
//!
//! The objective is Σ_t c_t ‖Xᵀ f_t(Σ) X‖ for a list of weighted covariance
//! maps, with Σ = VVᵀ. Each step multiplies V by (I − ηG) and renormalizes
//! its rows.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::covmap::{self, apply_deriv_to_matrix, apply_map_to_matrix, CovarianceMap};
use crate::elliptope::CorrelationFactor;
use crate::error::{domain, shape, Error, Result};
use crate::hermite::ContinuousCovMaps;

const ROW_ZERO_TOL: f64 = 1e-14;
const GRAD_TOL: f64 = 1e-10;
const DESCENT_SLACK: f64 = 1e-12;
const DEGENERATE_GAP: f64 = 1e-10;
const MAX_EXPANSIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    Nuclear,
    Operator,
}

impl FromStr for Norm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nuc" | "nuclear" => Ok(Norm::Nuclear),
            "op" | "operator" => Ok(Norm::Operator),
            other => Err(Error::Config(format!(
                "unknown norm '{other}'; valid values are nuc, op"
            ))),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::Nuclear => "nuc",
            Norm::Operator => "op",
        })
    }
}

/// Covariates, weighted covariance maps and a norm.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub x: DMatrix<f64>,
    pub maps: Vec<(f64, CovarianceMap)>,
    pub norm: Norm,
    pub row_normalized: bool,
}

impl DesignProblem {
    /// Objective with explicit weighted maps. Maps are tabulated here.
    pub fn new(x: DMatrix<f64>, maps: Vec<(f64, CovarianceMap)>, norm: Norm) -> Result<Self> {
        if x.nrows() < 2 {
            return shape(format!("need at least two units, got {}", x.nrows()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return domain("covariates must be finite");
        }
        if maps.is_empty() {
            return domain("design problem needs at least one covariance map");
        }
        let maps = maps
            .into_iter()
            .map(|(c, m)| (c, if m.is_tabulated() { m } else { covmap::tabulate(&m) }))
            .collect();
        Ok(DesignProblem {
            x,
            maps,
            norm,
            row_normalized: false,
        })
    }

    /// Discrete-arm objective for estimand weights `w`.
    ///
    /// Under the nuclear norm the per-arm matrices are PSD, so the weighted
    /// sum collapses into the single map Σ_k w_k² f_k. Under the operator norm
    /// each arm keeps its own term with weight w_k².
    pub fn discrete(x: DMatrix<f64>, w: &[f64], arms: usize, norm: Norm) -> Result<Self> {
        let maps = match norm {
            Norm::Nuclear => vec![(1.0, covmap::weighted_discrete_map(w, arms)?)],
            Norm::Operator => {
                if w.len() != arms {
                    return shape(format!("{} weights for {arms} arms", w.len()));
                }
                let mut maps = Vec::new();
                for (k, wk) in w.iter().enumerate() {
                    if *wk != 0.0 {
                        maps.push((wk * wk, covmap::f_arm(arms, k + 1)?));
                    }
                }
                maps
            }
        };
        Self::new(x, maps, norm)
    }

    /// Gaussian-design objective ‖Xᵀ f_{Y₀,w}(Σ) X‖ + ‖Xᵀ f_w(Σ) X‖.
    pub fn continuous(x: DMatrix<f64>, maps: &ContinuousCovMaps, norm: Norm) -> Result<Self> {
        Self::new(x, vec![(1.0, maps.map_y0w.clone()), (1.0, maps.map_w.clone())], norm)
    }

    /// Marks the problem as row-normalized after checking every covariate
    /// row has unit norm.
    pub fn with_row_normalized(mut self) -> Result<Self> {
        for (i, row) in self.x.row_iter().enumerate() {
            if (row.norm() - 1.0).abs() > 1e-10 {
                return domain(format!("covariate row {i} is not unit norm"));
            }
        }
        self.row_normalized = true;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    fn check_factor(&self, factor: &CorrelationFactor) -> Result<()> {
        if factor.n() != self.n() {
            return shape(format!("factor has {} rows, covariates have {}", factor.n(), self.n()));
        }
        Ok(())
    }

    fn check_sigma(&self, sigma: &DMatrix<f64>) -> Result<()> {
        if sigma.nrows() != self.n() || sigma.ncols() != self.n() {
            return shape(format!(
                "correlation matrix is {}x{}, covariates have {} rows",
                sigma.nrows(),
                sigma.ncols(),
                self.n()
            ));
        }
        Ok(())
    }

    /// Largest |f′| over the table grid, weighted by map coefficients.
    fn max_abs_deriv(&self) -> f64 {
        let m = covmap::DEFAULT_GRID_SIZE;
        let th = (1.0 - covmap::DEFAULT_EDGE_MARGIN).asin();
        self.maps
            .iter()
            .map(|(c, map)| {
                (0..m)
                    .map(|j| {
                        let theta = -th + 2.0 * th * j as f64 / (m - 1) as f64;
                        (c * map.deriv(theta.sin())).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .sum()
    }

    /// Default initial step 0.1/(1 + max off-diagonal |XXᵀ| · max |f′|).
    pub fn default_eta0(&self) -> f64 {
        let xxt = &self.x * self.x.transpose();
        let mut off = 0.0f64;
        for i in 0..self.n() {
            for j in 0..self.n() {
                if i != j {
                    off = off.max(xxt[(i, j)].abs());
                }
            }
        }
        0.1 / (1.0 + off * self.max_abs_deriv())
    }
}

/// Eigen-decomposition of the symmetric d×d matrix XᵀFX.
fn balance_matrix(x: &DMatrix<f64>, f: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let m = x.transpose() * f * x;
    let m = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(m)
}

fn norm_of(eig: &SymmetricEigen<f64, nalgebra::Dyn>, norm: Norm) -> f64 {
    match norm {
        Norm::Nuclear => eig.eigenvalues.iter().map(|v| v.abs()).sum(),
        Norm::Operator => eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max),
    }
}

/// Objective at Σ given as a matrix.
pub fn objective_sigma(problem: &DesignProblem, sigma: &DMatrix<f64>) -> Result<f64> {
    problem.check_sigma(sigma)?;
    let mut total = 0.0;
    for (c, map) in &problem.maps {
        let f = apply_map_to_matrix(map, sigma);
        total += c * norm_of(&balance_matrix(&problem.x, &f), problem.norm);
    }
    Ok(total)
}

/// Σ_t c_t ‖Xᵀ f_t(VVᵀ) X‖.
pub fn objective(problem: &DesignProblem, factor: &CorrelationFactor) -> Result<f64> {
    problem.check_factor(factor)?;
    objective_sigma(problem, &factor.gram())
}

/// Gradient of the objective with respect to the off-diagonal entries of Σ.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub matrix: DMatrix<f64>,
    /// Set when the operator-norm eigenvector is not unique, so the matrix
    /// is one element of the subdifferential.
    pub subgradient: bool,
}

fn gradient_impl(problem: &DesignProblem, sigma: &DMatrix<f64>, norm: Norm) -> Result<Gradient> {
    problem.check_sigma(sigma)?;
    let n = problem.n();
    let x = &problem.x;
    let mut g = DMatrix::zeros(n, n);
    let mut subgradient = false;
    let xxt = x * x.transpose();
    for (c, map) in &problem.maps {
        let weight = match norm {
            Norm::Nuclear => xxt.clone(),
            Norm::Operator => {
                let f = apply_map_to_matrix(map, sigma);
                let eig = balance_matrix(x, &f);
                let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
                order.sort_by(|&a, &b| {
                    eig.eigenvalues[b]
                        .abs()
                        .partial_cmp(&eig.eigenvalues[a].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                });
                let top = order[0];
                if order.len() > 1
                    && (eig.eigenvalues[top].abs() - eig.eigenvalues[order[1]].abs()).abs() < DEGENERATE_GAP
                {
                    subgradient = true;
                }
                let u = eig.eigenvectors.column(top);
                let xu = x * u;
                let sign = if eig.eigenvalues[top] < 0.0 { -1.0 } else { 1.0 };
                &xu * xu.transpose() * sign
            }
        };
        let fp = apply_deriv_to_matrix(map, sigma);
        g += weight.component_mul(&fp) * *c;
    }
    g.fill_diagonal(0.0);
    Ok(Gradient { matrix: g, subgradient })
}

/// (XXᵀ − diag(XXᵀ)) ∘ f′(Σ), summed over weighted maps.
pub fn gradient_nuclear(problem: &DesignProblem, factor: &CorrelationFactor) -> Result<Gradient> {
    problem.check_factor(factor)?;
    gradient_impl(problem, &factor.gram(), Norm::Nuclear)
}

/// (Xu₁u₁ᵀXᵀ − diag) ∘ f′(Σ), summed over weighted maps, with u₁ the leading
/// eigenvector of each XᵀF X.
pub fn gradient_operator(problem: &DesignProblem, factor: &CorrelationFactor) -> Result<Gradient> {
    problem.check_factor(factor)?;
    gradient_impl(problem, &factor.gram(), Norm::Operator)
}

/// Gradient for the problem's own norm, at Σ.
pub fn gradient_sigma(problem: &DesignProblem, sigma: &DMatrix<f64>) -> Result<Gradient> {
    gradient_impl(problem, sigma, problem.norm)
}

pub fn gradient(problem: &DesignProblem, factor: &CorrelationFactor) -> Result<Gradient> {
    problem.check_factor(factor)?;
    gradient_impl(problem, &factor.gram(), problem.norm)
}

/// Result of one projected step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub factor: CorrelationFactor,
    /// Rows whose updated norm fell below 1e-14; they keep their old value.
    pub degenerate_rows: Vec<usize>,
}

/// V ← (I − ηG)V followed by row normalization.
pub fn pgd_step(factor: &CorrelationFactor, grad: &DMatrix<f64>, eta: f64) -> StepOutcome {
    let v = factor.matrix();
    let mut next = v - (grad * v) * eta;
    let mut degenerate_rows = Vec::new();
    for i in 0..next.nrows() {
        let norm = next.row(i).norm();
        if !(norm >= ROW_ZERO_TOL) {
            degenerate_rows.push(i);
            next.set_row(i, &v.row(i));
        } else {
            let scaled = next.row(i) / norm;
            next.set_row(i, &scaled);
        }
    }
    StepOutcome {
        factor: CorrelationFactor::from_unchecked(next),
        degenerate_rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPolicy {
    Fixed(f64),
    /// Monotone line search. Each iteration starts from the previously
    /// accepted step (initially `eta0`, or the problem default when `None`),
    /// doubles it while the objective keeps decreasing, and otherwise halves
    /// it until the objective does not increase.
    Backtracking {
        eta0: Option<f64>,
        shrink: f64,
        max_halvings: usize,
    },
}

impl StepPolicy {
    pub fn backtracking() -> Self {
        StepPolicy::Backtracking {
            eta0: None,
            shrink: 0.5,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Objective after the step.
    pub objective: f64,
    pub eta: f64,
    /// Frobenius norm of the gradient the step was taken along.
    pub grad_norm: f64,
    pub halvings: usize,
}

#[derive(Debug, Clone, Default)]
pub struct OptimizerTrace {
    pub initial_objective: f64,
    pub records: Vec<TraceRecord>,
    pub degenerate_rows: Vec<usize>,
    pub subgradient_iterations: Vec<usize>,
    /// Why the loop ended before the iteration budget, if it did.
    pub stopped_early: Option<String>,
}

impl OptimizerTrace {
    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(self.initial_objective, |r| r.objective)
    }
}

fn check_finite(value: f64, iteration: usize, trace: &OptimizerTrace) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Optimization {
            iteration,
            message: format!("objective evaluated to {value}"),
            trace: trace.records.clone(),
        })
    }
}

/// Runs `iters` projected-gradient iterations from `init`.
pub fn pgd_gauss(
    problem: &DesignProblem,
    init: &CorrelationFactor,
    iters: usize,
    policy: StepPolicy,
) -> Result<(CorrelationFactor, OptimizerTrace)> {
    problem.check_factor(init)?;
    let mut trace = OptimizerTrace::default();
    let mut factor = init.clone();
    if iters == 0 {
        trace.initial_objective = objective(problem, &factor)?;
        return Ok((factor, trace));
    }
    let mut current = objective(problem, &factor)?;
    trace.initial_objective = current;
    check_finite(current, 0, &trace)?;

    let mut eta = match policy {
        StepPolicy::Fixed(e) => {
            if !(e >= 0.0) {
                return domain(format!("step size must be nonnegative, got {e}"));
            }
            e
        }
        StepPolicy::Backtracking { eta0, shrink, .. } => {
            if !(shrink > 0.0 && shrink < 1.0) {
                return domain(format!("shrink factor must be in (0, 1), got {shrink}"));
            }
            eta0.unwrap_or_else(|| problem.default_eta0())
        }
    };

    for it in 1..=iters {
        let sigma = factor.gram();
        let grad = gradient_sigma(problem, &sigma)?;
        if grad.subgradient {
            trace.subgradient_iterations.push(it);
        }
        let grad_norm = grad.matrix.norm();
        if !grad_norm.is_finite() {
            return Err(Error::Optimization {
                iteration: it,
                message: "gradient is not finite".into(),
                trace: trace.records,
            });
        }
        if grad_norm < GRAD_TOL {
            trace.stopped_early = Some(format!("gradient norm {grad_norm:e} below tolerance"));
            break;
        }
        let try_step = |eta: f64| -> Result<(StepOutcome, f64)> {
            let step = pgd_step(&factor, &grad.matrix, eta);
            let value = objective(problem, &step.factor)?;
            Ok((step, value))
        };

        let (step, value, halvings) = match policy {
            StepPolicy::Fixed(e) => {
                let (s, v) = try_step(e)?;
                (s, v, 0)
            }
            StepPolicy::Backtracking {
                shrink, max_halvings, ..
            } => {
                let mut halvings = 0;
                let (mut step, mut value) = try_step(eta)?;
                if value.is_finite() && value <= current + DESCENT_SLACK {
                    // Expand while strictly improving.
                    for _ in 0..MAX_EXPANSIONS {
                        let bigger = eta / shrink;
                        let (s, v) = try_step(bigger)?;
                        if v.is_finite() && v < value {
                            eta = bigger;
                            step = s;
                            value = v;
                        } else {
                            break;
                        }
                    }
                } else {
                    let mut accepted = false;
                    while halvings < max_halvings {
                        halvings += 1;
                        eta *= shrink;
                        let (s, v) = try_step(eta)?;
                        if v.is_finite() && v <= current + DESCENT_SLACK {
                            step = s;
                            value = v;
                            accepted = true;
                            break;
                        }
                    }
                    if !accepted {
                        trace.stopped_early = Some(format!("no descent step after {max_halvings} halvings"));
                        break;
                    }
                }
                (step, value, halvings)
            }
        };
        check_finite(value, it, &trace)?;
        trace.degenerate_rows.extend(step.degenerate_rows.iter().copied());
        factor = step.factor;
        current = value;
        trace.records.push(TraceRecord {
            iteration: it,
            objective: value,
            eta,
            grad_norm,
            halvings,
        });
    }
    trace.degenerate_rows.sort_unstable();
    trace.degenerate_rows.dedup();
    Ok((factor, trace))
}
