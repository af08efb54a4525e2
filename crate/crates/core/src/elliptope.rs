//! Correlation matrices held as row-normalized factors Σ = VVᵀ.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{domain, shape, Result};
use crate::rng::substream;

const UNIT_NORM_TOL: f64 = 1e-12;
const CLIP_TOL: f64 = 1e-10;

/// An n×k factor V whose rows have unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFactor {
    v: DMatrix<f64>,
}

impl CorrelationFactor {
    /// The rank-n identity factor (independent latent treatments).
    pub fn identity(n: usize) -> Self {
        CorrelationFactor {
            v: DMatrix::identity(n, n),
        }
    }

    /// Wraps `v`, requiring unit-norm rows.
    pub fn from_rows(v: DMatrix<f64>) -> Result<Self> {
        if v.nrows() == 0 || v.ncols() == 0 {
            return shape("factor must have at least one row and one column");
        }
        for (i, row) in v.row_iter().enumerate() {
            let norm = row.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
                return domain(format!("factor row {i} has norm {norm}, expected 1"));
            }
        }
        Ok(CorrelationFactor { v })
    }

    /// Scales every row of `v` to unit norm. Panics on a zero row.
    pub fn normalized(mut v: DMatrix<f64>) -> Self {
        for mut row in v.row_iter_mut() {
            let norm = row.norm();
            assert!(norm > 0.0, "cannot normalize a zero row");
            row /= norm;
        }
        CorrelationFactor { v }
    }

    pub(crate) fn from_unchecked(v: DMatrix<f64>) -> Self {
        CorrelationFactor { v }
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.v.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.v
    }

    /// Σ = VVᵀ with the diagonal set to exactly 1.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut s = &self.v * self.v.transpose();
        s.fill_diagonal(1.0);
        s
    }
}

/// Block-equicorrelation factor: units sharing a block label have latent
/// correlation `within_corr`, units in different blocks are independent.
pub fn block_factor(block_assignment: &[usize], within_corr: f64) -> Result<CorrelationFactor> {
    let n = block_assignment.len();
    if n == 0 {
        return shape("block assignment is empty");
    }
    if !(-1.0..=1.0).contains(&within_corr) {
        return domain(format!("within-block correlation {within_corr} outside [-1, 1]"));
    }
    let mut blocks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &b) in block_assignment.iter().enumerate() {
        blocks.entry(b).or_default().push(i);
    }
    let mut v = DMatrix::zeros(n, n);
    let mut col = 0;
    for (label, members) in &blocks {
        let m = members.len();
        if m > 1 && within_corr < -1.0 / (m as f64 - 1.0) - CLIP_TOL {
            return domain(format!(
                "block {label} of size {m} needs within-block correlation >= {}, got {within_corr}",
                -1.0 / (m as f64 - 1.0)
            ));
        }
        let eq = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { within_corr });
        let eig = SymmetricEigen::new(eq);
        for (c, &lambda) in eig.eigenvalues.iter().enumerate() {
            let lambda = if lambda < 0.0 && lambda > -CLIP_TOL {
                0.0
            } else {
                lambda
            };
            if lambda < 0.0 {
                return domain(format!("block {label} is not positive semidefinite"));
            }
            let s = lambda.sqrt();
            for (r, &unit) in members.iter().enumerate() {
                v[(unit, col + c)] = eig.eigenvectors[(r, c)] * s;
            }
        }
        col += m;
    }
    Ok(CorrelationFactor::normalized(v))
}

/// B latent treatment vectors T⁽ᵇ⁾ = V z⁽ᵇ⁾, stored one draw per row.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDraws {
    pub draws: DMatrix<f64>,
    pub seed: u64,
}

/// One draw T = Vz using substream `stream` of `seed`.
pub fn sample_one(factor: &CorrelationFactor, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = substream(seed, stream);
    let z: Vec<f64> = (0..factor.rank()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let v = factor.matrix();
    (0..factor.n())
        .map(|i| (0..factor.rank()).map(|c| v[(i, c)] * z[c]).sum())
        .collect()
}

/// Draw b uses substream b of `seed`.
pub fn sample(factor: &CorrelationFactor, b: usize, seed: u64) -> Result<GaussianDraws> {
    if b == 0 {
        return domain("number of draws must be positive");
    }
    let rows: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|r| sample_one(factor, seed, r as u64))
        .collect();
    let n = factor.n();
    Ok(GaussianDraws {
        draws: DMatrix::from_fn(b, n, |r, i| rows[r][i]),
        seed,
    })
}

/// Result of checking membership in the correlation elliptope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub unit_diag: bool,
    pub max_diag_deviation: f64,
    pub min_eigenvalue: f64,
    pub passes: bool,
}

pub fn validate(matrix: &DMatrix<f64>) -> Result<ValidationReport> {
    if matrix.nrows() != matrix.ncols() {
        return shape(format!(
            "matrix is {}x{}, expected square",
            matrix.nrows(),
            matrix.ncols()
        ));
    }
    let max_diag_deviation = matrix.diagonal().iter().map(|d| (d - 1.0).abs()).fold(0.0, f64::max);
    let sym = (matrix + matrix.transpose()) * 0.5;
    let min_eigenvalue = SymmetricEigen::new(sym).eigenvalues.min();
    let unit_diag = max_diag_deviation < 1e-8;
    Ok(ValidationReport {
        unit_diag,
        max_diag_deviation,
        min_eigenvalue,
        passes: unit_diag && min_eigenvalue > -1e-8,
    })
}
