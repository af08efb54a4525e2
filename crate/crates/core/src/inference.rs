//! Design-based variance estimation and confidence intervals.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::covmap::{apply_map_to_matrix, discretize, f_arm, f_cross, quantile_thresholds};
use crate::elliptope::{sample_one, CorrelationFactor};
use crate::error::{domain, shape, Error, Result};
use crate::estimators::{
    ht_continuous_slices, ht_contrast_slices, record_arms, ExperimentRecord, PotentialOutcomes, WeightFn,
};
use crate::normal;

/// Joint assignment probabilities at or below this make a variance
/// estimator undefined.
pub const JOINT_PROB_GUARD: f64 = 1e-8;
/// Smallest number of randomization draws accepted.
pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceKind {
    HtArmVariance,
    AronowSamiiBound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceReport {
    /// Estimate of n·Var(τ̂); `None` when not well defined.
    pub point: Option<f64>,
    pub well_defined: bool,
    pub min_joint_prob: f64,
    pub kind: VarianceKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalMethod {
    Normal,
    Randomization,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalReport {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub method: IntervalMethod,
    /// Randomization draws; zero for normal intervals.
    pub replicates: usize,
}

impl IntervalReport {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn check_factor(factor: &CorrelationFactor, n: usize) -> Result<()> {
    if factor.n() != n {
        return shape(format!("factor has {} rows for {n} units", factor.n()));
    }
    Ok(())
}

/// Precomputed pieces of the arm-k variance estimator for one design.
#[derive(Debug, Clone)]
pub struct ArmVarianceEstimator {
    arms: usize,
    k: usize,
    /// f_k(Σ_ij) off the diagonal, f_k(1) on it.
    fk: DMatrix<f64>,
    min_joint_prob: f64,
}

impl ArmVarianceEstimator {
    pub fn new(sigma: &DMatrix<f64>, k: usize, arms: usize) -> Result<Self> {
        let map = crate::covmap::tabulate(&f_arm(arms, k)?);
        let fk = apply_map_to_matrix(&map, sigma);
        let base = 1.0 / (arms * arms) as f64;
        let n = sigma.nrows();
        let mut min_joint_prob = 1.0 / arms as f64;
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    min_joint_prob = min_joint_prob.min(fk[(i, j)] + base);
                }
            }
        }
        Ok(ArmVarianceEstimator {
            arms,
            k,
            fk,
            min_joint_prob,
        })
    }

    pub fn min_joint_prob(&self) -> f64 {
        self.min_joint_prob
    }

    /// (K²/n) Σ_{i,j} Y_iY_j f_k(Σ_ij) 1{D_i = D_j = k}/P(D_i = D_j = k).
    pub fn estimate(&self, d: &[usize], y: &[f64]) -> VarianceReport {
        let well_defined = self.min_joint_prob > JOINT_PROB_GUARD;
        let point = well_defined.then(|| {
            let kk = self.arms as f64;
            let base = 1.0 / (kk * kk);
            let idx: Vec<usize> = (0..d.len()).filter(|&i| d[i] == self.k).collect();
            let mut s = 0.0;
            for &i in &idx {
                for &j in &idx {
                    let f = self.fk[(i, j)];
                    let p = if i == j { 1.0 / kk } else { f + base };
                    s += y[i] * y[j] * f / p;
                }
            }
            kk * kk * s / d.len() as f64
        });
        VarianceReport {
            point,
            well_defined,
            min_joint_prob: self.min_joint_prob,
            kind: VarianceKind::HtArmVariance,
        }
    }
}

/// Unbiased estimator of n·Var(τ̂_k).
pub fn variance_ht_arm(
    records: &[ExperimentRecord],
    factor: &CorrelationFactor,
    k: usize,
    arms: usize,
) -> Result<VarianceReport> {
    check_factor(factor, records.len())?;
    let d = record_arms(records, arms)?;
    let y: Vec<f64> = records.iter().map(|r| r.y).collect();
    Ok(ArmVarianceEstimator::new(&factor.gram(), k, arms)?.estimate(&d, &y))
}

/// n·Var(τ̂_k) = (K²/n) Y(k)ᵀ f_k(Σ) Y(k).
pub fn true_variance(po: &PotentialOutcomes, factor: &CorrelationFactor, k: usize, arms: usize) -> Result<f64> {
    let y = match po {
        PotentialOutcomes::Discrete(y) => y,
        PotentialOutcomes::Continuous(_) => return domain("true variance needs a discrete outcome table"),
    };
    if y.ncols() != arms || k == 0 || k > arms {
        return domain(format!("arm {k} of {arms} does not match a {}-arm table", y.ncols()));
    }
    check_factor(factor, y.nrows())?;
    let fk = apply_map_to_matrix(&f_arm(arms, k)?, &factor.gram());
    let yk = y.column(k - 1);
    let kk = arms as f64;
    Ok(kk * kk * (yk.transpose() * fk * yk)[(0, 0)] / y.nrows() as f64)
}

/// τ̂ ± z_{α/2} √(V̂/n).
pub fn normal_ci(tau_hat: f64, var_hat: f64, n: usize, alpha: f64) -> Result<IntervalReport> {
    if !(var_hat >= 0.0) {
        return domain(format!("variance estimate must be nonnegative, got {var_hat}"));
    }
    check_alpha(alpha)?;
    let half = normal::quantile(1.0 - alpha / 2.0) * (var_hat / n as f64).sqrt();
    Ok(IntervalReport {
        point: tau_hat,
        lower: tau_hat - half,
        upper: tau_hat + half,
        alpha,
        method: IntervalMethod::Normal,
        replicates: 0,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must be in (0, 1), got {alpha}"));
    }
    Ok(())
}

/// Precomputed cross-arm covariances for the Aronow–Samii bound.
#[derive(Debug, Clone)]
pub struct AronowSamiiEstimator {
    arms: usize,
    w: Vec<f64>,
    /// cross[(k−1)·K + (l−1)] holds f_{k,l}(Σ_ij).
    cross: Vec<DMatrix<f64>>,
    min_joint_prob: f64,
}

impl AronowSamiiEstimator {
    pub fn new(sigma: &DMatrix<f64>, w: &[f64], arms: usize) -> Result<Self> {
        if w.len() != arms {
            return shape(format!("{} contrast weights for {arms} arms", w.len()));
        }
        let n = sigma.nrows();
        let base = 1.0 / (arms * arms) as f64;
        let mut cross = Vec::with_capacity(arms * arms);
        let mut min_joint_prob = 1.0f64;
        for k in 1..=arms {
            for l in 1..=arms {
                let m = crate::covmap::tabulate(&f_cross(arms, k, l)?);
                let c = apply_map_to_matrix(&m, sigma);
                for j in 0..n {
                    for i in 0..n {
                        if i != j {
                            min_joint_prob = min_joint_prob.min(c[(i, j)] + base);
                        }
                    }
                }
                cross.push(c);
            }
        }
        Ok(AronowSamiiEstimator {
            arms,
            w: w.to_vec(),
            cross,
            min_joint_prob,
        })
    }

    pub fn estimate(&self, d: &[usize], y: &[f64]) -> VarianceReport {
        let well_defined = self.min_joint_prob > JOINT_PROB_GUARD;
        let point = well_defined.then(|| {
            let n = d.len();
            let kk = self.arms as f64;
            let base = 1.0 / (kk * kk);
            let w = &self.w;
            // Own-variance term: Var(1{D_i = k}) = (K−1)/K², P(D_i = k) = 1/K.
            let own: f64 = (0..n)
                .map(|i| w[d[i] - 1].powi(2) * y[i] * y[i] * (kk - 1.0) / kk)
                .sum();
            let mut pair = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let (k, l) = (d[i], d[j]);
                    let c = self.cross[(k - 1) * self.arms + (l - 1)][(i, j)];
                    pair += w[k - 1] * w[l - 1] * y[i] * y[j] * c / (c + base);
                }
            }
            // Bound on the same-unit cross-arm term.
            let abs_sum: f64 = w.iter().map(|v| v.abs()).sum();
            let bound: f64 = (0..n)
                .map(|i| {
                    let wk = w[d[i] - 1].abs();
                    // Σ_{k≠l} |w_k||w_l| (K 1{D_i=k} + K 1{D_i=l}) = 2K |w_{D_i}| (Σ|w| − |w_{D_i}|)
                    2.0 * kk * wk * (abs_sum - wk) * y[i] * y[i]
                })
                .sum();
            kk * kk * (own + pair) / n as f64 + bound / (2.0 * n as f64)
        });
        VarianceReport {
            point,
            well_defined,
            min_joint_prob: self.min_joint_prob,
            kind: VarianceKind::AronowSamiiBound,
        }
    }
}

/// Conservative estimator of n·Var(τ̂_w).
pub fn aronow_samii_bound(
    records: &[ExperimentRecord],
    factor: &CorrelationFactor,
    w: &[f64],
    arms: usize,
) -> Result<VarianceReport> {
    check_factor(factor, records.len())?;
    let d = record_arms(records, arms)?;
    let y: Vec<f64> = records.iter().map(|r| r.y).collect();
    Ok(AronowSamiiEstimator::new(&factor.gram(), w, arms)?.estimate(&d, &y))
}

/// Minimum-norm least squares through the SVD, discarding singular values
/// below 1e-10 times the largest.
pub fn ols_fit(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<DVector<f64>> {
    if design.nrows() == 0 {
        return domain("least squares needs at least one row");
    }
    if design.nrows() != response.len() {
        return shape(format!(
            "{} design rows for {} responses",
            design.nrows(),
            response.len()
        ));
    }
    if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
        return domain("least squares inputs must be finite");
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(DVector::zeros(design.ncols()));
    }
    svd.solve(response, 1e-10 * smax)
        .map_err(|e| Error::Numeric(format!("least squares failed: {e}")))
}

/// Type-7 sample quantile (linear interpolation between order statistics)
/// of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn quantile_interval(mut estimates: Vec<f64>, point: f64, alpha: f64) -> IntervalReport {
    estimates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    IntervalReport {
        point,
        lower: quantile_sorted(&estimates, alpha / 2.0),
        upper: quantile_sorted(&estimates, 1.0 - alpha / 2.0),
        alpha,
        method: IntervalMethod::Randomization,
        replicates: estimates.len(),
    }
}

fn with_intercept(x: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(x.iter().copied()).collect()
}

/// Randomization interval for a discrete contrast: per-arm linear fits
/// impute outcomes for redrawn arms, and the interval is the (α/2, 1 − α/2)
/// range of the re-estimates.
#[allow(clippy::too_many_arguments)]
pub fn randomization_ci_discrete(
    records: &[ExperimentRecord],
    factor: &CorrelationFactor,
    arms: usize,
    w: &[f64],
    draws: usize,
    alpha: f64,
    seed: u64,
) -> Result<IntervalReport> {
    if draws < MIN_DRAWS {
        return domain(format!(
            "at least {MIN_DRAWS} randomization draws required, got {draws}"
        ));
    }
    check_alpha(alpha)?;
    if w.len() != arms {
        return shape(format!("{} contrast weights for {arms} arms", w.len()));
    }
    let n = records.len();
    check_factor(factor, n)?;
    let d = record_arms(records, arms)?;
    let y: Vec<f64> = records.iter().map(|r| r.y).collect();
    let p = records[0].x.len();
    if records.iter().any(|r| r.x.len() != p) {
        return shape("records have differing covariate counts");
    }

    // pred[i·K + k−1] = m̂_k(X_i)
    let mut pred = vec![0.0; n * arms];
    for k in 1..=arms {
        let members: Vec<usize> = (0..n).filter(|&i| d[i] == k).collect();
        if members.is_empty() {
            return Err(Error::Procedure(format!("arm {k} has no observed units to fit")));
        }
        let design = DMatrix::from_fn(members.len(), p + 1, |r, c| {
            if c == 0 {
                1.0
            } else {
                records[members[r]].x[c - 1]
            }
        });
        let resp = DVector::from_iterator(members.len(), members.iter().map(|&i| y[i]));
        let beta = ols_fit(&design, &resp)?;
        for (i, r) in records.iter().enumerate() {
            let row = with_intercept(&r.x);
            pred[i * arms + k - 1] = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        }
    }

    let q = quantile_thresholds(arms)?;
    let point = ht_contrast_slices(&d, &y, w);
    let estimates: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let t = sample_one(factor, seed, b as u64);
            let db: Vec<usize> = t.iter().map(|&ti| discretize(ti, &q).unwrap()).collect();
            let yb: Vec<f64> = (0..n)
                .map(|i| {
                    if db[i] == d[i] {
                        y[i]
                    } else {
                        pred[i * arms + db[i] - 1]
                    }
                })
                .collect();
            ht_contrast_slices(&db, &yb, w)
        })
        .collect();
    Ok(quantile_interval(estimates, point, alpha))
}

/// A regressor column of the continuous imputation model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regressor {
    Intercept,
    /// Covariate j (0-based).
    Covariate(usize),
    /// Tᵖ.
    TreatmentPower(i32),
    /// Tᵖ·X_j.
    TreatmentPowerCovariate(i32, usize),
}

impl Regressor {
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        match *self {
            Regressor::Intercept => 1.0,
            Regressor::Covariate(j) => x[j],
            Regressor::TreatmentPower(p) => t.powi(p),
            Regressor::TreatmentPowerCovariate(p, j) => t.powi(p) * x[j],
        }
    }
}

/// Imputation model and treatment scale for continuous randomization
/// intervals. Latent draws z map to treatments `location + scale·z`.
#[derive(Debug, Clone)]
pub struct ContinuousModel {
    pub regressors: Vec<Regressor>,
    pub location: f64,
    pub scale: f64,
}

/// Randomization interval for a continuous estimand: one global linear fit
/// m̂(x, t) imputes every outcome whose redrawn treatment differs from the
/// observed one.
#[allow(clippy::too_many_arguments)]
pub fn randomization_ci_continuous(
    records: &[ExperimentRecord],
    factor: &CorrelationFactor,
    model: &ContinuousModel,
    weight: &WeightFn,
    draws: usize,
    alpha: f64,
    seed: u64,
) -> Result<IntervalReport> {
    if draws < MIN_DRAWS {
        return domain(format!(
            "at least {MIN_DRAWS} randomization draws required, got {draws}"
        ));
    }
    check_alpha(alpha)?;
    weight.validate()?;
    let n = records.len();
    if n == 0 {
        return domain("no records");
    }
    check_factor(factor, n)?;
    if model.regressors.is_empty() {
        return domain("imputation model has no regressors");
    }
    let mut t = Vec::with_capacity(n);
    for (i, r) in records.iter().enumerate() {
        t.push(r.t.ok_or_else(|| Error::Domain(format!("unit {i} has no treatment value")))?);
    }
    let p = records[0].x.len();
    for reg in &model.regressors {
        let j = match *reg {
            Regressor::Covariate(j) | Regressor::TreatmentPowerCovariate(_, j) => j,
            _ => continue,
        };
        if j >= p {
            return shape(format!("regressor uses covariate {j} but records have {p}"));
        }
    }
    let y: Vec<f64> = records.iter().map(|r| r.y).collect();
    let design = DMatrix::from_fn(n, model.regressors.len(), |i, c| {
        model.regressors[c].eval(&records[i].x, t[i])
    });
    let beta = ols_fit(&design, &DVector::from_column_slice(&y))?;
    let predict = |i: usize, ti: f64| -> f64 {
        model
            .regressors
            .iter()
            .zip(beta.iter())
            .map(|(r, b)| r.eval(&records[i].x, ti) * b)
            .sum()
    };
    let point = ht_continuous_slices(&t, &y, weight)?;
    let estimates: Result<Vec<f64>> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let z = sample_one(factor, seed, b as u64);
            let tb: Vec<f64> = z.iter().map(|&zi| model.location + model.scale * zi).collect();
            let yb: Vec<f64> = (0..n)
                .map(|i| if tb[i] == t[i] { y[i] } else { predict(i, tb[i]) })
                .collect();
            ht_continuous_slices(&tb, &yb, weight)
        })
        .collect();
    Ok(quantile_interval(estimates?, point, alpha))
}
