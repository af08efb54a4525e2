//! Simulation scenarios, baseline designs and Monte Carlo benchmarks.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::covmap::{discretize, quantile_thresholds, ArmQuantiles};
use crate::elliptope::{sample_one, CorrelationFactor};
use crate::error::{domain, Error, Result};
use crate::estimators::{
    ht_continuous_slices, ht_contrast_slices, true_estimand, EstimandSpec, PotentialOutcomes, ResponseFn, WeightFn,
};
use crate::hermite::{continuous_cov_maps, DEFAULT_NODES, DEFAULT_TRUNCATION};
use crate::inference::{
    randomization_ci_continuous, randomization_ci_discrete, ArmVarianceEstimator, AronowSamiiEstimator,
    ContinuousModel, IntervalReport, Regressor,
};
use crate::optimizer::{objective_sigma, pgd_gauss, DesignProblem, Norm, StepPolicy};
use crate::rng::{derive_seed, substream, Rng};

/// Cap on rerandomization redraws.
pub const RERAND_MAX_DRAWS: usize = 100_000;
/// Planned treatment mean and scale of the continuous scenarios.
pub const CONTINUOUS_MU: f64 = 125.0;
pub const CONTINUOUS_SIGMA: f64 = 250.0 / 6.0;

/// A named estimand of a scenario.
#[derive(Debug, Clone)]
pub struct NamedEstimand {
    pub name: String,
    pub spec: EstimandSpec,
}

/// Covariates, potential outcomes and estimands of one simulated population.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub x: DMatrix<f64>,
    pub potential_outcomes: PotentialOutcomes,
    pub estimands: Vec<NamedEstimand>,
    /// Number of arms for discrete scenarios.
    pub arms: Option<usize>,
    /// Treatments are `location + scale·T` with T the latent Gaussian.
    pub treatment_location: f64,
    pub treatment_scale: f64,
    /// Regressors of the continuous imputation model.
    pub regressors: Vec<Regressor>,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn estimand(&self, name: &str) -> Result<&NamedEstimand> {
        self.estimands
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Config(format!("scenario {} has no estimand '{name}'", self.name)))
    }

    pub fn truth(&self, spec: &EstimandSpec) -> Result<f64> {
        true_estimand(&self.potential_outcomes, spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreeArmVariant {
    SingleFeature,
    Uniform,
}

/// Three-arm population with n = 18, d = 5 and noiseless linear outcomes
/// Y(k) = Xβ_k.
pub fn gen_three_arm(variant: ThreeArmVariant, seed: u64) -> Scenario {
    let (n, d, arms) = (18, 5, 3);
    let mut rng = substream(seed, 0);
    let x = match variant {
        ThreeArmVariant::SingleFeature => {
            let first = Normal::new(2.0, 3.0).unwrap();
            let rest = Normal::new(0.0, 0.1).unwrap();
            DMatrix::from_fn(n, d, |_, j| {
                if j == 0 {
                    first.sample(&mut rng)
                } else {
                    rest.sample(&mut rng)
                }
            })
        }
        ThreeArmVariant::Uniform => {
            let all = Normal::new(0.0, 3.6).unwrap();
            DMatrix::from_fn(n, d, |_, _| all.sample(&mut rng))
        }
    };
    let beta = DMatrix::from_fn(d, arms, |j, _| {
        let e: f64 = Exp1.sample(&mut rng);
        if j == 0 && variant == ThreeArmVariant::SingleFeature {
            2.0 + 2.0 * e
        } else {
            2.0 * e
        }
    });
    let y = &x * beta;
    let third = 1.0 / 3.0;
    let mut estimands = vec![NamedEstimand {
        name: "tau".into(),
        spec: EstimandSpec::Contrast { w: vec![third; 3] },
    }];
    for k in 1..=arms {
        estimands.push(NamedEstimand {
            name: format!("tau{k}"),
            spec: EstimandSpec::Arm { k, arms },
        });
    }
    let name = match variant {
        ThreeArmVariant::SingleFeature => "three_arm_single_feature",
        ThreeArmVariant::Uniform => "three_arm_uniform",
    };
    Scenario {
        name: name.into(),
        seed,
        x,
        potential_outcomes: PotentialOutcomes::Discrete(y),
        estimands,
        arms: Some(arms),
        treatment_location: 0.0,
        treatment_scale: 1.0,
        regressors: Vec::new(),
    }
}

/// Factor levels (A, B) of arm D = 1 + 2A + B.
pub fn factorial_levels(arm: usize) -> (f64, f64) {
    let code = arm - 1;
    ((code / 2) as f64, (code % 2) as f64)
}

/// Two-factor population with n = 100, d = 5:
/// Y(A, B) = Xβ₁ + A·Xβ₂ + B(0.2 + Xβ₃) + 0.5AB + ε, with ε shared across
/// the four potential outcomes.
pub fn gen_factorial(seed: u64) -> Scenario {
    let (n, d) = (100, 5);
    let b1 = DVector::from_column_slice(&[-1.0, -1.0, -2.0 / 3.0, -6.0 / 5.0, 0.0]);
    let b2 = DVector::from_column_slice(&[0.0, 0.0, -8.0 / 5.0, 8.0 / 5.0, 8.0 / 5.0]);
    let b3 = DVector::from_column_slice(&[2.0, 2.0, 2.0, 0.0, 0.0]);
    let mut rng = substream(seed, 0);
    let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
    let noise = Normal::new(0.0, 0.1).unwrap();
    let eps: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
    let (xb1, xb2, xb3) = (&x * &b1, &x * &b2, &x * &b3);
    let y = DMatrix::from_fn(n, 4, |i, c| {
        let (a, b) = factorial_levels(c + 1);
        xb1[i] + a * xb2[i] + b * (0.2 + xb3[i]) + 0.5 * a * b + eps[i]
    });
    let contrast = |w: [f64; 4]| EstimandSpec::Contrast {
        w: w.iter().map(|v| 0.5 * v).collect(),
    };
    Scenario {
        name: "factorial".into(),
        seed,
        x,
        potential_outcomes: PotentialOutcomes::Discrete(y),
        estimands: vec![
            NamedEstimand {
                name: "tau1".into(),
                spec: contrast([-1.0, -1.0, 1.0, 1.0]),
            },
            NamedEstimand {
                name: "tau2".into(),
                spec: contrast([-1.0, 1.0, -1.0, 1.0]),
            },
            NamedEstimand {
                name: "tau12".into(),
                spec: contrast([1.0, -1.0, -1.0, 1.0]),
            },
        ],
        arms: Some(4),
        treatment_location: 0.0,
        treatment_scale: 1.0,
        regressors: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContinuousKind {
    /// Y_i(t) = base_i + s_i t; estimand τ_L = mean s_i.
    LinearSlope,
    /// Y_i(t) = base_i + b s_i t³; estimand τ_M = 3b·mean s_i·(μ² + σ²).
    CubicMonotone(f64),
    /// Y_i(t) = base_i + b s_i t²; estimand τ_C = 2b·mean s_i.
    QuadraticConcave(f64),
}

impl ContinuousKind {
    pub fn power(&self) -> i32 {
        match self {
            ContinuousKind::LinearSlope => 1,
            ContinuousKind::CubicMonotone(_) => 3,
            ContinuousKind::QuadraticConcave(_) => 2,
        }
    }

    pub fn strength(&self) -> f64 {
        match *self {
            ContinuousKind::LinearSlope => 1.0,
            ContinuousKind::CubicMonotone(b) | ContinuousKind::QuadraticConcave(b) => b,
        }
    }
}

/// Number of regions in the continuous scenarios.
pub const REGIONS: usize = 6;

/// Synthetic price-experiment population: six region dummies U_i, three
/// unit covariates X_i, and response functions
/// Y_i(t) = X_iᵀα₁ + U_iᵀα₂ + b·U_iᵀβ·tᵖ + ε_i with negative β scaled by
/// 1/250ᵖ. Treatments are N(125, (250/6)²).
pub fn gen_continuous(kind: ContinuousKind, n: usize, seed: u64) -> Result<Scenario> {
    if kind.strength() < 0.0 || !kind.strength().is_finite() {
        return domain(format!("effect strength must be nonnegative, got {}", kind.strength()));
    }
    if n < REGIONS {
        return domain(format!("need at least {REGIONS} units, got {n}"));
    }
    let mut rng = substream(seed, 0);
    let p = kind.power();
    let mut regions: Vec<usize> = (0..n).map(|i| i % REGIONS).collect();
    regions.shuffle(&mut rng);
    let covs = DMatrix::from_fn(n, 3, |_, j| match j {
        0 => rng.random_range(0.3..0.7),
        1 => rng.random_range(0.2..0.8),
        _ => StandardNormal.sample(&mut rng),
    });
    let alpha1 = [0.2, 0.1, 0.02];
    let alpha2: Vec<f64> = (0..REGIONS).map(|_| rng.random_range(0.4..0.9)).collect();
    let scale = 250f64.powi(p);
    let beta: Vec<f64> = (0..REGIONS).map(|_| -rng.random_range(0.5..1.5) / scale).collect();
    let noise = Normal::new(0.0, 0.05).unwrap();
    let eps: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();

    let b = kind.strength();
    let mut responses: Vec<ResponseFn> = Vec::with_capacity(n);
    for i in 0..n {
        let base = (0..3).map(|j| covs[(i, j)] * alpha1[j]).sum::<f64>() + alpha2[regions[i]] + eps[i];
        let coef = b * beta[regions[i]];
        responses.push(Arc::new(move |t: f64| base + coef * t.powi(p)));
    }
    let x = DMatrix::from_fn(n, 3 + REGIONS, |i, j| {
        if j < 3 {
            covs[(i, j)]
        } else if regions[i] == j - 3 {
            1.0
        } else {
            0.0
        }
    });
    let (mu, sigma) = (CONTINUOUS_MU, CONTINUOUS_SIGMA);
    let (name, estimand) = match kind {
        ContinuousKind::LinearSlope => ("tau_L", WeightFn::FirstDerivative { mu, sigma }),
        ContinuousKind::CubicMonotone(_) => ("tau_M", WeightFn::FirstDerivative { mu, sigma }),
        ContinuousKind::QuadraticConcave(_) => ("tau_C", WeightFn::SecondDerivative { mu, sigma }),
    };
    // Imputation model: X + U + U·tᵖ (U has no separate intercept).
    let mut regressors: Vec<Regressor> = (0..3 + REGIONS).map(Regressor::Covariate).collect();
    regressors.extend((0..REGIONS).map(|r| Regressor::TreatmentPowerCovariate(p, 3 + r)));
    let scenario_name = match kind {
        ContinuousKind::LinearSlope => "continuous_linear",
        ContinuousKind::CubicMonotone(_) => "continuous_cubic",
        ContinuousKind::QuadraticConcave(_) => "continuous_quadratic",
    };
    Ok(Scenario {
        name: scenario_name.into(),
        seed,
        x,
        potential_outcomes: PotentialOutcomes::Continuous(responses),
        estimands: vec![NamedEstimand {
            name: name.into(),
            spec: EstimandSpec::Continuous(estimand),
        }],
        arms: None,
        treatment_location: mu,
        treatment_scale: sigma,
        regressors,
    })
}

/// Baseline response Y₀(t) = 1 − t/250 of the continuous scenarios.
pub fn linear_baseline(t: f64) -> f64 {
    1.0 - t / 250.0
}

/// Uniformly random split into arms of sizes ⌊n/K⌋ or ⌈n/K⌉; the arms
/// receiving the n mod K extra units are chosen uniformly.
pub fn design_cr_rng(n: usize, arms: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=arms).collect();
    order.shuffle(rng);
    let extra = n % arms;
    let mut labels = Vec::with_capacity(n);
    for (pos, &k) in order.iter().enumerate() {
        let size = n / arms + usize::from(pos < extra);
        labels.extend(std::iter::repeat_n(k, size));
    }
    labels.shuffle(rng);
    labels
}

pub fn design_cr(n: usize, arms: usize, seed: u64) -> Vec<usize> {
    design_cr_rng(n, arms, &mut substream(seed, 0))
}

/// Precomputed rerandomization criterion.
#[derive(Debug, Clone)]
pub struct RerandCriterion {
    /// Pseudo-inverse of the sample covariance of X.
    s_inv: DMatrix<f64>,
    pub threshold: f64,
    arms: usize,
}

impl RerandCriterion {
    /// Per-pair χ²_d threshold at quantile p_a^{1/P}, P = K(K−1)/2, so that
    /// the joint acceptance probability is about p_a if the pairwise
    /// statistics were independent.
    pub fn new(x: &DMatrix<f64>, arms: usize, p_a: f64) -> Result<Self> {
        if !(p_a > 0.0 && p_a <= 1.0) {
            return domain(format!("acceptance probability must be in (0, 1], got {p_a}"));
        }
        let (n, d) = (x.nrows(), x.ncols());
        if n < 2 {
            return domain("rerandomization needs at least two units");
        }
        let mean = x.row_mean();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let s = centered.transpose() * &centered / (n as f64 - 1.0);
        let s_inv = s
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numeric(format!("covariance pseudo-inverse failed: {e}")))?;
        let pairs = (arms * (arms - 1) / 2) as f64;
        let threshold = if p_a >= 1.0 {
            f64::INFINITY
        } else {
            ChiSquared::new(d as f64)
                .map_err(|e| Error::Numeric(e.to_string()))?
                .inverse_cdf(p_a.powf(1.0 / pairs))
        };
        Ok(RerandCriterion { s_inv, threshold, arms })
    }

    /// Largest pairwise Mahalanobis distance between arm covariate means.
    pub fn max_distance(&self, x: &DMatrix<f64>, labels: &[usize]) -> f64 {
        let d = x.ncols();
        let mut sums = vec![DVector::<f64>::zeros(d); self.arms];
        let mut counts = vec![0usize; self.arms];
        for (i, &k) in labels.iter().enumerate() {
            sums[k - 1] += x.row(i).transpose();
            counts[k - 1] += 1;
        }
        let mut worst = 0.0f64;
        for k in 0..self.arms {
            for l in k + 1..self.arms {
                if counts[k] == 0 || counts[l] == 0 {
                    return f64::INFINITY;
                }
                let diff = &sums[k] / counts[k] as f64 - &sums[l] / counts[l] as f64;
                let scale = 1.0 / counts[k] as f64 + 1.0 / counts[l] as f64;
                let m = (diff.transpose() * &self.s_inv * &diff)[(0, 0)] / scale;
                worst = worst.max(m);
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerandOutcome {
    pub labels: Vec<usize>,
    pub accepted: bool,
    pub draws: usize,
    pub max_distance: f64,
}

pub fn design_rerand_rng(x: &DMatrix<f64>, criterion: &RerandCriterion, rng: &mut Rng) -> RerandOutcome {
    let n = x.nrows();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for draw in 1..=RERAND_MAX_DRAWS {
        let labels = design_cr_rng(n, criterion.arms, rng);
        let m = criterion.max_distance(x, &labels);
        if m <= criterion.threshold {
            return RerandOutcome {
                labels,
                accepted: true,
                draws: draw,
                max_distance: m,
            };
        }
        if best.as_ref().is_none_or(|(b, _)| m < *b) {
            best = Some((m, labels));
        }
    }
    let (max_distance, labels) = best.expect("at least one draw");
    RerandOutcome {
        labels,
        accepted: false,
        draws: RERAND_MAX_DRAWS,
        max_distance,
    }
}

/// Mahalanobis rerandomization of complete randomization.
pub fn design_rerand(x: &DMatrix<f64>, seed: u64, p_a: f64, arms: usize) -> Result<RerandOutcome> {
    let criterion = RerandCriterion::new(x, arms, p_a)?;
    Ok(design_rerand_rng(x, &criterion, &mut substream(seed, 0)))
}

/// Where treatment assignments come from.
#[derive(Debug, Clone)]
pub enum DesignSource {
    Gaussian(CorrelationFactor),
    CompleteRandomization,
    Rerandomization { p_a: f64 },
}

impl DesignSource {
    pub fn label(&self) -> &'static str {
        match self {
            DesignSource::Gaussian(_) => "gaussian",
            DesignSource::CompleteRandomization => "CR",
            DesignSource::Rerandomization { .. } => "RR",
        }
    }
}

/// Draws assignments for replicate `b` of a discrete scenario.
struct DiscreteSampler<'a> {
    design: &'a DesignSource,
    x: &'a DMatrix<f64>,
    quantiles: ArmQuantiles,
    criterion: Option<RerandCriterion>,
    arms: usize,
}

impl<'a> DiscreteSampler<'a> {
    fn new(design: &'a DesignSource, x: &'a DMatrix<f64>, arms: usize) -> Result<Self> {
        if let DesignSource::Gaussian(f) = design {
            if f.n() != x.nrows() {
                return domain(format!("factor has {} rows for {} units", f.n(), x.nrows()));
            }
        }
        let criterion = match design {
            DesignSource::Rerandomization { p_a } => Some(RerandCriterion::new(x, arms, *p_a)?),
            _ => None,
        };
        Ok(DiscreteSampler {
            design,
            x,
            quantiles: quantile_thresholds(arms)?,
            criterion,
            arms,
        })
    }

    fn draw(&self, seed: u64, b: u64) -> Vec<usize> {
        match self.design {
            DesignSource::Gaussian(f) => sample_one(f, seed, b)
                .into_iter()
                .map(|t| discretize(t, &self.quantiles).unwrap())
                .collect(),
            DesignSource::CompleteRandomization => design_cr_rng(self.x.nrows(), self.arms, &mut substream(seed, b)),
            DesignSource::Rerandomization { .. } => {
                let c = self.criterion.as_ref().unwrap();
                design_rerand_rng(self.x, c, &mut substream(seed, b)).labels
            }
        }
    }
}

fn observed(y: &DMatrix<f64>, labels: &[usize]) -> Vec<f64> {
    labels.iter().enumerate().map(|(i, &k)| y[(i, k - 1)]).collect()
}

/// Per-replicate estimates of an estimand under a design, replicate b using
/// substream b of `seed`.
pub fn mc_estimates(
    scenario: &Scenario,
    design: &DesignSource,
    estimand: &EstimandSpec,
    replicates: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    match (&scenario.potential_outcomes, estimand) {
        (PotentialOutcomes::Discrete(y), _) => {
            let w = estimand
                .arm_weights()
                .ok_or_else(|| Error::Domain("continuous estimand on a discrete scenario".into()))?;
            let arms = y.ncols();
            if w.len() != arms {
                return domain(format!("{} weights for {arms} arms", w.len()));
            }
            let sampler = DiscreteSampler::new(design, &scenario.x, arms)?;
            Ok((0..replicates)
                .into_par_iter()
                .map(|b| {
                    let labels = sampler.draw(seed, b as u64);
                    ht_contrast_slices(&labels, &observed(y, &labels), &w)
                })
                .collect())
        }
        (PotentialOutcomes::Continuous(fs), EstimandSpec::Continuous(weight)) => {
            let factor = match design {
                DesignSource::Gaussian(f) => f,
                _ => return domain("continuous scenarios need a Gaussian design"),
            };
            let (loc, scale) = (scenario.treatment_location, scenario.treatment_scale);
            (0..replicates)
                .into_par_iter()
                .map(|b| {
                    let t: Vec<f64> = sample_one(factor, seed, b as u64)
                        .iter()
                        .map(|z| loc + scale * z)
                        .collect();
                    let y: Vec<f64> = t.iter().zip(fs).map(|(&ti, f)| f(ti)).collect();
                    ht_continuous_slices(&t, &y, weight)
                })
                .collect()
        }
        _ => domain("discrete estimand on a continuous scenario"),
    }
}

/// Mean squared error of the HT estimator over `replicates` assignments.
pub fn mc_mse(
    scenario: &Scenario,
    design: &DesignSource,
    estimand: &EstimandSpec,
    replicates: usize,
    seed: u64,
) -> Result<f64> {
    if replicates < 100 {
        return domain(format!("at least 100 replicates required, got {replicates}"));
    }
    let truth = scenario.truth(estimand)?;
    let est = mc_estimates(scenario, design, estimand, replicates, seed)?;
    Ok(est.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / replicates as f64)
}

/// Interval construction used by [`mc_coverage`].
#[derive(Debug, Clone)]
pub enum CiProcedure {
    /// (−∞, ∞).
    Unbounded,
    /// An empty interval.
    Empty,
    /// Normal interval from the arm variance estimator (arm estimands) or
    /// the Aronow–Samii bound (contrasts). Gaussian designs only.
    Normal { alpha: f64 },
    /// Randomization interval with `draws` redraws. Gaussian designs only.
    Randomization { draws: usize, alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageResult {
    pub coverage: f64,
    pub mean_width: f64,
    pub replicates: usize,
    /// Replicates without an interval (variance not well defined, or the
    /// procedure inapplicable). They count as not covering.
    pub undefined: usize,
}

/// Fraction of outer replicates whose interval contains the truth.
pub fn mc_coverage(
    scenario: &Scenario,
    design: &DesignSource,
    estimand: &EstimandSpec,
    procedure: &CiProcedure,
    outer: usize,
    seed: u64,
) -> Result<CoverageResult> {
    if outer < 100 {
        return domain(format!("at least 100 outer replicates required, got {outer}"));
    }
    let truth = scenario.truth(estimand)?;
    match procedure {
        CiProcedure::Unbounded => {
            return Ok(CoverageResult {
                coverage: 1.0,
                mean_width: f64::INFINITY,
                replicates: outer,
                undefined: 0,
            })
        }
        CiProcedure::Empty => {
            return Ok(CoverageResult {
                coverage: 0.0,
                mean_width: 0.0,
                replicates: outer,
                undefined: 0,
            })
        }
        _ => {}
    }
    let factor = match design {
        DesignSource::Gaussian(f) => f,
        _ => return domain("interval procedures need a Gaussian design"),
    };
    let n = scenario.n();
    let outer_seed = derive_seed(seed, 1);
    let inner_seed = derive_seed(seed, 2);

    let intervals: Vec<Result<Option<IntervalReport>>> = match (&scenario.potential_outcomes, estimand) {
        (PotentialOutcomes::Discrete(y), _) => {
            let arms = y.ncols();
            let w = estimand
                .arm_weights()
                .ok_or_else(|| Error::Domain("continuous estimand".into()))?;
            let q = quantile_thresholds(arms)?;
            let sigma = factor.gram();
            let var_est = match (procedure, estimand) {
                (CiProcedure::Normal { .. }, EstimandSpec::Arm { k, .. }) => {
                    Some(VarEst::Arm(ArmVarianceEstimator::new(&sigma, *k, arms)?))
                }
                (CiProcedure::Normal { .. }, _) => Some(VarEst::Bound(AronowSamiiEstimator::new(&sigma, &w, arms)?)),
                _ => None,
            };
            (0..outer)
                .into_par_iter()
                .map(|b| {
                    let labels: Vec<usize> = sample_one(factor, outer_seed, b as u64)
                        .into_iter()
                        .map(|t| discretize(t, &q).unwrap())
                        .collect();
                    let yobs = observed(y, &labels);
                    match procedure {
                        CiProcedure::Normal { alpha } => {
                            let rep = var_est.as_ref().unwrap().estimate(&labels, &yobs);
                            match rep.point {
                                None => Ok(None),
                                Some(v) => {
                                    let tau = ht_contrast_slices(&labels, &yobs, &w);
                                    crate::inference::normal_ci(tau, v.max(0.0), n, *alpha).map(Some)
                                }
                            }
                        }
                        CiProcedure::Randomization { draws, alpha } => {
                            let records: Vec<_> = (0..n)
                                .map(|i| crate::estimators::ExperimentRecord {
                                    t: None,
                                    d: Some(labels[i]),
                                    y: yobs[i],
                                    x: scenario.x.row(i).iter().copied().collect(),
                                })
                                .collect();
                            randomization_ci_discrete(
                                &records,
                                factor,
                                arms,
                                &w,
                                *draws,
                                *alpha,
                                derive_seed(inner_seed, b as u64),
                            )
                            .map(Some)
                        }
                        _ => unreachable!(),
                    }
                })
                .collect()
        }
        (PotentialOutcomes::Continuous(fs), EstimandSpec::Continuous(weight)) => {
            let (draws, alpha) = match procedure {
                CiProcedure::Randomization { draws, alpha } => (*draws, *alpha),
                _ => return domain("continuous scenarios support randomization intervals only"),
            };
            let model = ContinuousModel {
                regressors: scenario.regressors.clone(),
                location: scenario.treatment_location,
                scale: scenario.treatment_scale,
            };
            (0..outer)
                .into_par_iter()
                .map(|b| {
                    let t: Vec<f64> = sample_one(factor, outer_seed, b as u64)
                        .iter()
                        .map(|z| model.location + model.scale * z)
                        .collect();
                    let records: Vec<_> = (0..n)
                        .map(|i| crate::estimators::ExperimentRecord {
                            t: Some(t[i]),
                            d: None,
                            y: fs[i](t[i]),
                            x: scenario.x.row(i).iter().copied().collect(),
                        })
                        .collect();
                    randomization_ci_continuous(
                        &records,
                        factor,
                        &model,
                        weight,
                        draws,
                        alpha,
                        derive_seed(inner_seed, b as u64),
                    )
                    .map(Some)
                })
                .collect()
        }
        _ => return domain("estimand kind does not match the scenario"),
    };

    let mut covered = 0usize;
    let mut width = 0.0;
    let mut undefined = 0usize;
    for r in intervals {
        // A replicate whose assignment leaves the procedure inapplicable
        // (e.g. an empty arm) yields no interval.
        let r = match r {
            Err(Error::Procedure(_)) => None,
            other => other?,
        };
        match r {
            Some(ci) => {
                covered += usize::from(ci.contains(truth));
                width += ci.width();
            }
            None => undefined += 1,
        }
    }
    let defined = outer - undefined;
    Ok(CoverageResult {
        coverage: covered as f64 / outer as f64,
        mean_width: if defined > 0 { width / defined as f64 } else { f64::NAN },
        replicates: outer,
        undefined,
    })
}

enum VarEst {
    Arm(ArmVarianceEstimator),
    Bound(AronowSamiiEstimator),
}

impl VarEst {
    fn estimate(&self, d: &[usize], y: &[f64]) -> crate::inference::VarianceReport {
        match self {
            VarEst::Arm(e) => e.estimate(d, y),
            VarEst::Bound(e) => e.estimate(d, y),
        }
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Named design in a benchmark run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DesignName {
    /// Independent latent treatments (Σ = I).
    Bg,
    /// Optimized Gaussian design.
    Og,
    Cr,
    Rr,
}

impl FromStr for DesignName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BG" => Ok(DesignName::Bg),
            "OG" => Ok(DesignName::Og),
            "CR" => Ok(DesignName::Cr),
            "RR" => Ok(DesignName::Rr),
            _ => Err(Error::Config(format!(
                "unknown design '{s}'; valid designs are BG, OG, CR, RR"
            ))),
        }
    }
}

impl fmt::Display for DesignName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesignName::Bg => "BG",
            DesignName::Og => "OG",
            DesignName::Cr => "CR",
            DesignName::Rr => "RR",
        })
    }
}

/// Scenario generator selected by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    ThreeArm(ThreeArmVariant),
    Factorial,
    Continuous(ContinuousKind),
}

impl Generator {
    /// Parses a generator name; `b` is the effect strength of the nonlinear
    /// continuous kinds.
    pub fn parse(name: &str, b: f64) -> Result<Self> {
        Ok(match name {
            "three_arm_single_feature" => Generator::ThreeArm(ThreeArmVariant::SingleFeature),
            "three_arm_uniform" => Generator::ThreeArm(ThreeArmVariant::Uniform),
            "factorial" => Generator::Factorial,
            "continuous_linear" => Generator::Continuous(ContinuousKind::LinearSlope),
            "continuous_cubic" => Generator::Continuous(ContinuousKind::CubicMonotone(b)),
            "continuous_quadratic" => Generator::Continuous(ContinuousKind::QuadraticConcave(b)),
            other => {
                return Err(Error::Config(format!(
                    "unknown generator '{other}'; valid generators are three_arm_single_feature, \
                     three_arm_uniform, factorial, continuous_linear, continuous_cubic, continuous_quadratic"
                )))
            }
        })
    }

    pub fn generate(&self, seed: u64, n: usize) -> Result<Scenario> {
        Ok(match *self {
            Generator::ThreeArm(v) => gen_three_arm(v, seed),
            Generator::Factorial => gen_factorial(seed),
            Generator::Continuous(kind) => gen_continuous(kind, n, seed)?,
        })
    }
}

/// Settings of a benchmark run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub generator: Generator,
    pub designs: Vec<DesignName>,
    /// Estimand names; empty means all estimands of the scenario.
    pub estimands: Vec<String>,
    pub replicates: usize,
    pub seed: u64,
    /// PGD iterations for the optimized design.
    pub iterations: usize,
    /// Outer replicates for coverage; 0 skips coverage.
    pub coverage_replicates: usize,
    pub ci_draws: usize,
    pub alpha: f64,
    pub p_a: f64,
    /// Units of continuous scenarios.
    pub n: usize,
}

impl SimConfig {
    pub fn new(generator: Generator) -> Self {
        SimConfig {
            generator,
            designs: vec![DesignName::Bg, DesignName::Og],
            estimands: Vec::new(),
            replicates: 1000,
            seed: 0,
            iterations: 200,
            coverage_replicates: 0,
            ci_draws: 500,
            alpha: 0.05,
            p_a: 0.01,
            n: 26,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub design: String,
    pub estimand: String,
    pub mse: f64,
    pub balance_objective_nuc: f64,
    /// NaN when coverage was not computed or not available for the design.
    pub coverage: f64,
    pub mean_ci_width: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<ReportRow>,
}

/// Exact assignment covariance of arm-k indicators under complete
/// randomization with equal arm sizes m = n/K.
fn cr_arm_covariance(n: usize, arms: usize) -> DMatrix<f64> {
    let kk = arms as f64;
    let m = n as f64 / kk;
    let var = (kk - 1.0) / (kk * kk);
    let joint = m * (m - 1.0) / (n as f64 * (n as f64 - 1.0));
    let off = joint - 1.0 / (kk * kk);
    DMatrix::from_fn(n, n, |i, j| if i == j { var } else { off })
}

fn nuclear(x: &DMatrix<f64>, cov: &DMatrix<f64>) -> f64 {
    let m = x.transpose() * cov * x;
    let m = (&m + m.transpose()) * 0.5;
    nalgebra::SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .sum()
}

/// Monte Carlo Σ_k w_k² Cov_k(D) for an assignment mechanism given by draws.
fn empirical_weighted_covariance(draws: &[Vec<usize>], w: &[f64]) -> DMatrix<f64> {
    let n = draws[0].len();
    let b = draws.len() as f64;
    let mut total = DMatrix::zeros(n, n);
    for (k, wk) in w.iter().enumerate() {
        if *wk == 0.0 {
            continue;
        }
        let ind = DMatrix::from_fn(draws.len(), n, |r, i| if draws[r][i] == k + 1 { 1.0 } else { 0.0 });
        let mean = ind.row_mean();
        let centered = DMatrix::from_fn(draws.len(), n, |r, i| ind[(r, i)] - mean[i]);
        total += (centered.transpose() * centered) * (wk * wk / b);
    }
    total
}

/// Optimizes a Gaussian design for a scenario estimand by nuclear-norm PGD
/// from the identity.
pub fn optimized_design(scenario: &Scenario, estimand: &EstimandSpec, iterations: usize) -> Result<CorrelationFactor> {
    let problem = balance_problem(scenario, estimand)?;
    let (factor, _) = pgd_gauss(
        &problem,
        &CorrelationFactor::identity(scenario.n()),
        iterations,
        StepPolicy::backtracking(),
    )?;
    Ok(factor)
}

/// Nuclear-norm balance problem of a scenario estimand.
pub fn balance_problem(scenario: &Scenario, estimand: &EstimandSpec) -> Result<DesignProblem> {
    match (scenario.arms, estimand) {
        (Some(arms), _) => {
            let w = estimand
                .arm_weights()
                .ok_or_else(|| Error::Domain("continuous estimand".into()))?;
            DesignProblem::discrete(scenario.x.clone(), &w, arms, Norm::Nuclear)
        }
        (None, EstimandSpec::Continuous(weight)) => {
            let (loc, scale) = (scenario.treatment_location, scenario.treatment_scale);
            let wf = weight.clone();
            let maps = continuous_cov_maps(
                move |z| linear_baseline(loc + scale * z),
                move |z| wf.eval(loc + scale * z),
                DEFAULT_TRUNCATION,
                DEFAULT_NODES,
            )?;
            DesignProblem::continuous(scenario.x.clone(), &maps, Norm::Nuclear)
        }
        _ => domain("estimand kind does not match the scenario"),
    }
}

fn gaussian_balance(scenario: &Scenario, estimand: &EstimandSpec, factor: &CorrelationFactor) -> Result<f64> {
    let problem = balance_problem(scenario, estimand)?;
    objective_sigma(&problem, &factor.gram())
}

/// Runs every (design, estimand) pair of the configuration.
pub fn run_scenario(config: &SimConfig) -> Result<BenchmarkReport> {
    let scenario = config.generator.generate(derive_seed(config.seed, 0), config.n)?;
    let mut report = BenchmarkReport::default();
    if config.designs.is_empty() {
        return Ok(report);
    }
    let estimands: Vec<&NamedEstimand> = if config.estimands.is_empty() {
        scenario.estimands.iter().collect()
    } else {
        config
            .estimands
            .iter()
            .map(|e| scenario.estimand(e))
            .collect::<Result<_>>()?
    };
    let continuous = scenario.arms.is_none();
    for design in &config.designs {
        if continuous && matches!(design, DesignName::Cr | DesignName::Rr) {
            return Err(Error::Config(format!("design {design} needs a discrete scenario")));
        }
    }
    // Optimized designs are shared by estimands with the same objective.
    let mut og_cache: HashMap<String, CorrelationFactor> = HashMap::new();
    let mc_seed = derive_seed(config.seed, 1);
    let cov_seed = derive_seed(config.seed, 2);
    let balance_seed = derive_seed(config.seed, 3);

    for design in &config.designs {
        for named in &estimands {
            let spec = &named.spec;
            let source = match design {
                DesignName::Bg => DesignSource::Gaussian(CorrelationFactor::identity(scenario.n())),
                DesignName::Og => {
                    let key = match spec.arm_weights() {
                        Some(w) => format!("{:?}", w.iter().map(|v| v * v).collect::<Vec<_>>()),
                        None => format!("{spec:?}"),
                    };
                    let factor = match og_cache.get(&key) {
                        Some(f) => f.clone(),
                        None => {
                            let f = optimized_design(&scenario, spec, config.iterations)?;
                            og_cache.insert(key, f.clone());
                            f
                        }
                    };
                    DesignSource::Gaussian(factor)
                }
                DesignName::Cr => DesignSource::CompleteRandomization,
                DesignName::Rr => DesignSource::Rerandomization { p_a: config.p_a },
            };
            let mse = mc_mse(&scenario, &source, spec, config.replicates, mc_seed)?;
            let balance = match (&source, scenario.arms) {
                (DesignSource::Gaussian(f), _) => gaussian_balance(&scenario, spec, f)?,
                (DesignSource::CompleteRandomization, Some(arms)) => {
                    let w = spec.arm_weights().unwrap();
                    let c = cr_arm_covariance(scenario.n(), arms) * w.iter().map(|v| v * v).sum::<f64>();
                    nuclear(&scenario.x, &c)
                }
                (DesignSource::Rerandomization { p_a }, Some(arms)) => {
                    let w = spec.arm_weights().unwrap();
                    let crit = RerandCriterion::new(&scenario.x, arms, *p_a)?;
                    let draws: Vec<Vec<usize>> = (0..2000u64)
                        .into_par_iter()
                        .map(|b| design_rerand_rng(&scenario.x, &crit, &mut substream(balance_seed, b)).labels)
                        .collect();
                    nuclear(&scenario.x, &empirical_weighted_covariance(&draws, &w))
                }
                _ => unreachable!(),
            };
            let (coverage, width) = match (&source, config.coverage_replicates) {
                (DesignSource::Gaussian(_), outer) if outer > 0 => {
                    let proc_ = CiProcedure::Randomization {
                        draws: config.ci_draws,
                        alpha: config.alpha,
                    };
                    let c = mc_coverage(&scenario, &source, spec, &proc_, outer, cov_seed)?;
                    (c.coverage, c.mean_width)
                }
                _ => (f64::NAN, f64::NAN),
            };
            report.rows.push(ReportRow {
                scenario: scenario.name.clone(),
                design: design.to_string(),
                estimand: named.name.clone(),
                mse,
                balance_objective_nuc: balance,
                coverage,
                mean_ci_width: width,
                replicates: config.replicates,
            });
        }
    }
    Ok(report)
}
