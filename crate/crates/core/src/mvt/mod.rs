//! Rectangle probabilities and equicoordinate quantiles of multivariate
//! normal and t distributions.
//!
//! One- and two-dimensional problems are evaluated deterministically; higher
//! dimensions use randomized quasi-Monte Carlo with a reported error bound.
//! Variables that are perfectly (anti-)correlated are merged before
//! integration.

mod bivariate;
mod qmc;
mod quantile;

pub use bivariate::{bivariate_cdf, bivariate_rectangle, bvnd, bvtl};
pub use quantile::equicoordinate_quantile;

use crate::error::{Result, TrendError};
use crate::mmm::nearest_correlation;
use crate::par::Execution;
use crate::special::{t_cdf, Df};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Correlations this close to +-1 identify a variable with another one.
const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvtOptions {
    /// Absolute error target.
    pub tol: f64,
    pub seed: u64,
    /// Integrand evaluation budget.
    pub max_points: usize,
    pub randomizations: usize,
    pub execution: Execution,
}

impl Default for MvtOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            seed: 42,
            max_points: 10_000_000,
            randomizations: 12,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvtResult {
    pub probability: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// `P(lower <= T <= upper)` for `T` multivariate t (or normal) with
/// correlation `corr`.
#[derive(Debug, Clone, PartialEq)]
pub struct MvtProblem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub corr: DMatrix<f64>,
    pub df: Df,
}

impl MvtProblem {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, corr: DMatrix<f64>, df: Df) -> Result<Self> {
        let q = upper.len();
        if q == 0 || lower.len() != q || corr.shape() != (q, q) {
            return Err(TrendError::Design("bounds and correlation matrix disagree in size".into()));
        }
        if lower.iter().chain(&upper).any(|v| v.is_nan()) {
            return Err(TrendError::Design("NaN integration bound".into()));
        }
        if matches!(df, Df::Finite(0)) {
            return Err(TrendError::Design("degrees of freedom must be positive".into()));
        }
        for i in 0..q {
            if (corr[(i, i)] - 1.0).abs() > 1e-8 {
                return Err(TrendError::Design("correlation matrix needs a unit diagonal".into()));
            }
            for j in 0..i {
                if (corr[(i, j)] - corr[(j, i)]).abs() > 1e-10 || corr[(i, j)].abs() > 1.0 + 1e-12 {
                    return Err(TrendError::Design("correlation matrix is not a valid symmetric matrix".into()));
                }
            }
        }
        let min_eig = SymmetricEigen::new(corr.clone()).eigenvalues.min();
        if min_eig < -1e-8 {
            return Err(TrendError::Design(format!(
                "correlation matrix is not positive semidefinite (eigenvalue {min_eig:.3e})"
            )));
        }
        let corr = if min_eig < 0.0 { nearest_correlation(corr) } else { corr };
        Ok(Self { lower, upper, corr, df })
    }

    /// `P(T_j <= upper_j for all j)`.
    pub fn upper_orthant(upper: Vec<f64>, corr: DMatrix<f64>, df: Df) -> Result<Self> {
        let lower = vec![f64::NEG_INFINITY; upper.len()];
        Self::new(lower, upper, corr, df)
    }

    pub fn dim(&self) -> usize {
        self.upper.len()
    }
}

/// Merges variables whose correlation is +-1 with an earlier one, returning
/// the reduced bounds and correlation, or `None` if the region is empty.
fn merge_duplicates(p: &MvtProblem) -> Option<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
    let q = p.dim();
    let mut keep: Vec<usize> = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for i in 0..q {
        let mut merged = false;
        for (slot, &j) in keep.iter().enumerate() {
            let r = p.corr[(i, j)];
            if r >= 1.0 - MERGE_TOL {
                lower[slot] = f64::max(lower[slot], p.lower[i]);
                upper[slot] = f64::min(upper[slot], p.upper[i]);
                merged = true;
            } else if r <= -1.0 + MERGE_TOL {
                lower[slot] = f64::max(lower[slot], -p.upper[i]);
                upper[slot] = f64::min(upper[slot], -p.lower[i]);
                merged = true;
            }
            if merged {
                break;
            }
        }
        if !merged {
            keep.push(i);
            lower.push(p.lower[i]);
            upper.push(p.upper[i]);
        }
    }
    if lower.iter().zip(&upper).any(|(a, b)| a >= b) {
        return None;
    }
    let corr = DMatrix::from_fn(keep.len(), keep.len(), |a, b| p.corr[(keep[a], keep[b])]);
    Some((lower, upper, corr))
}

/// Rectangle probability with an absolute error estimate. Deterministic for
/// a given seed.
pub fn mvt_cdf(problem: &MvtProblem, opts: &MvtOptions) -> Result<MvtResult> {
    if !(opts.tol > 0.0) {
        return Err(TrendError::Design("mvt tolerance must be positive".into()));
    }
    let Some((lower, upper, corr)) = merge_duplicates(problem) else {
        return Ok(MvtResult { probability: 0.0, error: 0.0, evaluations: 0 });
    };
    let df = problem.df;
    match lower.len() {
        1 => {
            let p = (t_cdf(upper[0], df) - t_cdf(lower[0], df)).clamp(0.0, 1.0);
            Ok(MvtResult { probability: p, error: 0.0, evaluations: 0 })
        }
        2 => {
            let p = bivariate_rectangle([lower[0], lower[1]], [upper[0], upper[1]], corr[(0, 1)], df);
            Ok(MvtResult { probability: p, error: 0.0, evaluations: 0 })
        }
        _ => {
            let prep = qmc::prepare(&lower, &upper, &corr, df);
            qmc::integrate(&prep, opts)
        }
    }
}
