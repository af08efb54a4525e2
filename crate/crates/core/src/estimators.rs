//! Horvitz–Thompson estimators for discrete arms and continuous treatments.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::covmap::{discretize, quantile_thresholds};
use crate::error::{domain, shape, Error, Result};
use crate::hermite::SmoothFn;
use crate::normal;
use crate::quadrature::{adaptive_legendre, gauss_hermite_cached};

/// Weight function for a continuous-treatment estimand.
#[derive(Clone)]
pub enum WeightFn {
    /// Average effect over [r, l]: 1{t ∈ [r, l]} / ((l − r) φ(t)).
    Interval {
        r: f64,
        l: f64,
    },
    /// Average first derivative: (t − μ)/σ².
    FirstDerivative {
        mu: f64,
        sigma: f64,
    },
    /// Average second derivative: ((t − μ)²/σ² − 1)/σ².
    SecondDerivative {
        mu: f64,
        sigma: f64,
    },
    Custom(SmoothFn),
}

impl fmt::Debug for WeightFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFn::Interval { r, l } => write!(f, "Interval({r}, {l})"),
            WeightFn::FirstDerivative { mu, sigma } => write!(f, "FirstDerivative({mu}, {sigma})"),
            WeightFn::SecondDerivative { mu, sigma } => write!(f, "SecondDerivative({mu}, {sigma})"),
            WeightFn::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl WeightFn {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightFn::Interval { r, l } if !(r < l) => domain(format!("interval weight needs r < l, got [{r}, {l}]")),
            WeightFn::FirstDerivative { sigma, .. } | WeightFn::SecondDerivative { sigma, .. } if !(sigma > 0.0) => {
                domain(format!("weight scale must be positive, got {sigma}"))
            }
            _ => Ok(()),
        }
    }

    /// Location and scale of the treatment distribution this weight is
    /// calibrated for; the interval weight assumes standard normal treatments.
    pub fn location_scale(&self) -> (f64, f64) {
        match *self {
            WeightFn::FirstDerivative { mu, sigma } | WeightFn::SecondDerivative { mu, sigma } => (mu, sigma),
            _ => (0.0, 1.0),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        weight_eval(self, t)
    }
}

/// Value of the weight at treatment t. The interval weight is infinite where
/// φ(t) underflows; `ht_continuous` rejects such units.
pub fn weight_eval(weight: &WeightFn, t: f64) -> f64 {
    match weight {
        WeightFn::Interval { r, l } => {
            if t >= *r && t <= *l {
                1.0 / ((l - r) * normal::pdf(t))
            } else {
                0.0
            }
        }
        WeightFn::FirstDerivative { mu, sigma } => (t - mu) / (sigma * sigma),
        WeightFn::SecondDerivative { mu, sigma } => {
            let z = (t - mu) / sigma;
            (z * z - 1.0) / (sigma * sigma)
        }
        WeightFn::Custom(f) => f(t),
    }
}

/// What is being estimated.
#[derive(Debug, Clone)]
pub enum EstimandSpec {
    /// τ_k, the mean outcome under arm k (1-based).
    Arm { k: usize, arms: usize },
    /// τ_w = Σ w_k τ_k.
    Contrast { w: Vec<f64> },
    /// τ_w^c = (1/n) Σ E[Y_i(T) w(T)].
    Continuous(WeightFn),
}

impl EstimandSpec {
    /// Arm weights of a discrete estimand.
    pub fn arm_weights(&self) -> Option<Vec<f64>> {
        match self {
            EstimandSpec::Arm { k, arms } => {
                let mut w = vec![0.0; *arms];
                if *k >= 1 && *k <= *arms {
                    w[k - 1] = 1.0;
                }
                Some(w)
            }
            EstimandSpec::Contrast { w } => Some(w.clone()),
            EstimandSpec::Continuous(_) => None,
        }
    }
}

/// One unit of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub t: Option<f64>,
    pub d: Option<usize>,
    pub y: f64,
    pub x: Vec<f64>,
}

/// Arm of every record: the recorded D if present, otherwise the
/// discretized latent T.
pub fn record_arms(records: &[ExperimentRecord], arms: usize) -> Result<Vec<usize>> {
    if records.is_empty() {
        return domain("no records");
    }
    let q = quantile_thresholds(arms)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| match (r.d, r.t) {
            (Some(d), _) if d >= 1 && d <= arms => Ok(d),
            (Some(d), _) => domain(format!("unit {i} has arm {d} outside 1..={arms}")),
            (None, Some(t)) => discretize(t, &q),
            (None, None) => domain(format!("unit {i} has neither a treatment value nor an arm")),
        })
        .collect()
}

/// (K/n) Σ 1{D_i = k} Y_i over parallel slices.
pub fn ht_arm_slices(d: &[usize], y: &[f64], k: usize, arms: usize) -> f64 {
    let s: f64 = d.iter().zip(y).filter(|(&di, _)| di == k).map(|(_, &yi)| yi).sum();
    arms as f64 * s / d.len() as f64
}

/// Σ_k w_k τ̂_k over parallel slices.
pub fn ht_contrast_slices(d: &[usize], y: &[f64], w: &[f64]) -> f64 {
    let arms = w.len();
    let s: f64 = d.iter().zip(y).map(|(&di, &yi)| w[di - 1] * yi).sum();
    arms as f64 * s / d.len() as f64
}

pub fn ht_arm(records: &[ExperimentRecord], k: usize, arms: usize) -> Result<f64> {
    if k == 0 || k > arms {
        return domain(format!("arm index {k} outside 1..={arms}"));
    }
    let d = record_arms(records, arms)?;
    let y: Vec<f64> = records.iter().map(|r| r.y).collect();
    Ok(ht_arm_slices(&d, &y, k, arms))
}

pub fn ht_contrast(records: &[ExperimentRecord], w: &[f64], arms: usize) -> Result<f64> {
    if w.len() != arms {
        return shape(format!("{} contrast weights for {arms} arms", w.len()));
    }
    let d = record_arms(records, arms)?;
    let y: Vec<f64> = records.iter().map(|r| r.y).collect();
    Ok(ht_contrast_slices(&d, &y, w))
}

/// (1/n) Σ Y_i w(T_i) over parallel slices.
pub fn ht_continuous_slices(t: &[f64], y: &[f64], weight: &WeightFn) -> Result<f64> {
    if t.is_empty() {
        return domain("no records");
    }
    let mut s = 0.0;
    for (i, (&ti, &yi)) in t.iter().zip(y).enumerate() {
        if let WeightFn::Interval { r, l } = weight {
            if ti >= *r && ti <= *l && normal::pdf(ti) < 1e-300 {
                return Err(Error::Numeric(format!(
                    "interval weight undefined at unit {i}: density underflows at t = {ti}"
                )));
            }
        }
        s += yi * weight_eval(weight, ti);
    }
    Ok(s / t.len() as f64)
}

pub fn ht_continuous(records: &[ExperimentRecord], weight: &WeightFn) -> Result<f64> {
    weight.validate()?;
    let mut t = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        match r.t {
            Some(v) => t.push(v),
            None => return domain(format!("unit {i} has no treatment value")),
        }
    }
    let y: Vec<f64> = records.iter().map(|r| r.y).collect();
    ht_continuous_slices(&t, &y, weight)
}

/// Maps a standard normal draw into [a, b] with probability 0.998:
/// (a + b)/2 + t (b − a)/(2 z_{0.999}).
pub fn rescale_treatment(t: f64, a: f64, b: f64) -> f64 {
    let z = normal::quantile(0.999);
    0.5 * (a + b) + t * (b - a) / (2.0 * z)
}

pub type ResponseFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Complete potential outcomes of a population.
#[derive(Clone)]
pub enum PotentialOutcomes {
    /// n × K table, column k−1 holding Y(k).
    Discrete(DMatrix<f64>),
    /// One response function per unit, defined on the treatment scale.
    Continuous(Vec<ResponseFn>),
}

impl fmt::Debug for PotentialOutcomes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialOutcomes::Discrete(m) => write!(f, "Discrete({}x{})", m.nrows(), m.ncols()),
            PotentialOutcomes::Continuous(v) => write!(f, "Continuous({} units)", v.len()),
        }
    }
}

/// Exact value of an estimand.
///
/// Continuous truths integrate (1/n) Σ ∫ Y_i(t) w(t) p(t) dt with p the
/// N(μ, σ²) density given by the weight's location and scale: Gauss–Hermite
/// for polynomial-type weights, adaptive Gauss–Legendre on [r, l] for the
/// interval weight.
pub fn true_estimand(po: &PotentialOutcomes, spec: &EstimandSpec) -> Result<f64> {
    match (po, spec) {
        (PotentialOutcomes::Discrete(y), EstimandSpec::Arm { k, arms }) => {
            if *arms != y.ncols() || *k == 0 || k > arms {
                return domain(format!("arm {k} of {arms} does not match a {}-arm table", y.ncols()));
            }
            Ok(y.column(k - 1).mean())
        }
        (PotentialOutcomes::Discrete(y), EstimandSpec::Contrast { w }) => {
            if w.len() != y.ncols() {
                return shape(format!("{} weights for a {}-arm table", w.len(), y.ncols()));
            }
            Ok(w.iter().enumerate().map(|(k, wk)| wk * y.column(k).mean()).sum())
        }
        (PotentialOutcomes::Continuous(fs), EstimandSpec::Continuous(weight)) => {
            weight.validate()?;
            if fs.is_empty() {
                return domain("no response functions");
            }
            let mean_response = |t: f64| fs.iter().map(|f| f(t)).sum::<f64>() / fs.len() as f64;
            match weight {
                WeightFn::Interval { r, l } => {
                    let g = |t: f64| mean_response(t) * weight_eval(weight, t) * normal::pdf(t);
                    Ok(adaptive_legendre(&g, *r, *l, 1e-12))
                }
                _ => {
                    let (mu, sigma) = weight.location_scale();
                    let rule = gauss_hermite_cached(crate::hermite::DEFAULT_NODES);
                    Ok(rule
                        .nodes
                        .iter()
                        .zip(&rule.weights)
                        .map(|(&z, &w)| {
                            let t = mu + sigma * z;
                            w * mean_response(t) * weight_eval(weight, t)
                        })
                        .sum())
                }
            }
        }
        _ => domain("estimand kind does not match the potential-outcome table"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(d: usize, y: f64) -> ExperimentRecord {
        ExperimentRecord {
            t: None,
            d: Some(d),
            y,
            x: vec![],
        }
    }

    #[test]
    fn arm_and_contrast_examples() {
        let r: Vec<_> = [(1, 1.0), (1, 2.0), (2, 3.0), (2, 4.0)]
            .iter()
            .map(|&(d, y)| rec(d, y))
            .collect();
        assert_eq!(ht_arm(&r, 1, 2).unwrap(), 1.5);
        assert_eq!(ht_contrast(&r, &[1.0, -1.0], 2).unwrap(), -2.0);
        assert_eq!(ht_contrast(&r, &[0.0, 1.0], 2).unwrap(), ht_arm(&r, 2, 2).unwrap());
        assert_eq!(ht_arm(&r, 3, 3).unwrap(), 0.0);
        assert!(ht_arm(&[], 1, 2).is_err());
        assert!(ht_contrast(&r, &[1.0], 2).is_err());
    }

    #[test]
    fn latent_treatments_are_discretized() {
        let r = vec![
            ExperimentRecord {
                t: Some(-1.0),
                d: None,
                y: 2.0,
                x: vec![],
            },
            ExperimentRecord {
                t: Some(0.0),
                d: None,
                y: 5.0,
                x: vec![],
            },
            ExperimentRecord {
                t: Some(0.1),
                d: None,
                y: 7.0,
                x: vec![],
            },
        ];
        // K = 2: t = 0 belongs to arm 1.
        assert_eq!(record_arms(&r, 2).unwrap(), vec![1, 1, 2]);
        assert!((ht_arm(&r, 1, 2).unwrap() - 2.0 * 7.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn weight_examples() {
        let first = WeightFn::FirstDerivative { mu: 0.0, sigma: 1.0 };
        let second = WeightFn::SecondDerivative { mu: 0.0, sigma: 1.0 };
        assert_eq!(weight_eval(&first, 2.0), 2.0);
        assert_eq!(weight_eval(&second, 1.0), 0.0);
        let iv = WeightFn::Interval { r: -1.0, l: 1.0 };
        assert!((weight_eval(&iv, 0.0) - 1.253_314_137_315_500_3).abs() < 1e-14);
        assert_eq!(weight_eval(&iv, 1.5), 0.0);
        assert!(WeightFn::Interval { r: 1.0, l: 1.0 }.validate().is_err());
        assert!(WeightFn::FirstDerivative { mu: 0.0, sigma: 0.0 }.validate().is_err());
    }

    #[test]
    fn interval_weight_rejects_underflow() {
        let iv = WeightFn::Interval { r: -100.0, l: 100.0 };
        let err = ht_continuous_slices(&[0.0, 40.0], &[1.0, 1.0], &iv).unwrap_err();
        assert!(err.to_string().contains("unit 1"));
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_treatment(0.0, 2.0, 6.0), 4.0);
        let z = normal::quantile(0.999);
        assert!((rescale_treatment(z, 0.0, 250.0) - 250.0).abs() < 1e-12);
    }

    #[test]
    fn truth_examples() {
        let y = DMatrix::from_element(3, 2, 4.0);
        let po = PotentialOutcomes::Discrete(y);
        assert_eq!(
            true_estimand(&po, &EstimandSpec::Contrast { w: vec![1.0, -1.0] }).unwrap(),
            0.0
        );
        let sq: ResponseFn = Arc::new(|t| t * t);
        let cube: ResponseFn = Arc::new(|t| t * t * t);
        let first = EstimandSpec::Continuous(WeightFn::FirstDerivative { mu: 0.0, sigma: 1.0 });
        let second = EstimandSpec::Continuous(WeightFn::SecondDerivative { mu: 0.0, sigma: 1.0 });
        let p_sq = PotentialOutcomes::Continuous(vec![sq]);
        assert!(true_estimand(&p_sq, &first).unwrap().abs() < 1e-12);
        assert!((true_estimand(&p_sq, &second).unwrap() - 2.0).abs() < 1e-12);
        let p_cube = PotentialOutcomes::Continuous(vec![cube]);
        assert!((true_estimand(&p_cube, &first).unwrap() - 3.0).abs() < 1e-12);
        // Location-scale weights recover the average derivative at N(μ, σ²).
        let scaled = EstimandSpec::Continuous(WeightFn::FirstDerivative { mu: 2.0, sigma: 0.5 });
        let want = 3.0 * (4.0 + 0.25);
        assert!((true_estimand(&p_cube, &scaled).unwrap() - want).abs() < 1e-10);
        // Interval weight averages Y over [r, l].
        let iv = EstimandSpec::Continuous(WeightFn::Interval { r: 0.0, l: 2.0 });
        assert!((true_estimand(&p_sq, &iv).unwrap() - 4.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn contrast_is_linear() {
        let d = [1, 2, 3, 1, 2];
        let y = [0.5, -1.0, 2.0, 3.0, 0.25];
        let w1 = [1.0, 0.5, -2.0];
        let w2 = [0.25, 0.0, 1.0];
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let lhs = ht_contrast_slices(&d, &y, &sum);
        let rhs = ht_contrast_slices(&d, &y, &w1) + ht_contrast_slices(&d, &y, &w2);
        assert!((lhs - rhs).abs() < 1e-14);
    }
}
