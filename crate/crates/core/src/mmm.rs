//! Multiple marginal models: parameters from several models fitted to the
//! same units, stacked, with their joint covariance estimated from per-unit
//! influence contributions.

use crate::error::{Result, TrendError};
use crate::special::Df;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Scale on which an estimate is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectScale {
    #[default]
    Identity,
    /// Estimate lives on a log scale (log-odds, log-rate); reported as `exp`.
    Exp,
}

/// One selected scalar parameter (a slope or a contrast) of one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    pub label: String,
    pub estimate: f64,
    pub variance: f64,
    pub influence: Vec<f64>,
    pub df: Df,
    pub scale: EffectScale,
}

impl MarginalModel {
    /// Builds a model whose variance is the cross-product of its influence
    /// vector.
    pub fn from_influence(label: impl Into<String>, estimate: f64, influence: Vec<f64>, df: Df) -> Result<Self> {
        let label = label.into();
        let variance: f64 = influence.iter().map(|v| v * v).sum();
        if !(variance > 0.0) {
            return Err(TrendError::DegenerateModel { label });
        }
        Ok(Self { label, estimate, variance, influence, df, scale: EffectScale::Identity })
    }

    pub fn with_scale(mut self, scale: EffectScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn std_error(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn statistic(&self) -> f64 {
        self.estimate / self.std_error()
    }
}

/// Projects the `n x p` influence matrix onto the linear function `c`.
pub fn project_influence(influence: &DMatrix<f64>, c: &[f64]) -> Vec<f64> {
    let c = DVector::from_column_slice(c);
    (influence * c).iter().copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSet {
    pub name: String,
    pub models: Vec<MarginalModel>,
    pub unit_ids: Vec<String>,
}

impl MarginalSet {
    pub fn new(name: impl Into<String>, models: Vec<MarginalModel>, unit_ids: Vec<String>) -> Result<Self> {
        let n = unit_ids.len();
        for m in &models {
            if m.influence.len() != n {
                return Err(TrendError::Alignment { expected: n, found: m.influence.len() });
            }
            if !(m.variance > 0.0) || m.influence.iter().all(|v| *v == 0.0) {
                return Err(TrendError::DegenerateModel { label: m.label.clone() });
            }
        }
        for (i, m) in models.iter().enumerate() {
            if models[..i].iter().any(|o| o.label == m.label) {
                return Err(TrendError::Design(format!("duplicate model label `{}`", m.label)));
            }
        }
        Ok(Self { name: name.into(), models, unit_ids })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Joint covariance of the stacked estimates: `Psi' Psi`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let q = self.models.len();
        DMatrix::from_fn(q, q, |a, b| {
            self.models[a]
                .influence
                .iter()
                .zip(&self.models[b].influence)
                .map(|(x, y)| x * y)
                .sum()
        })
    }
}

/// Correlation of the stacked estimates, repaired to be positive
/// semidefinite with unit diagonal.
pub fn joint_correlation(set: &MarginalSet) -> Result<DMatrix<f64>> {
    for m in &set.models {
        if m.influence.iter().all(|v| *v == 0.0) {
            return Err(TrendError::DegenerateModel { label: m.label.clone() });
        }
    }
    let cov = set.covariance();
    let q = cov.nrows();
    let sd: Vec<f64> = (0..q).map(|i| cov[(i, i)].sqrt()).collect();
    let mut r = DMatrix::from_fn(q, q, |a, b| {
        if a == b {
            1.0
        } else {
            (cov[(a, b)] / (sd[a] * sd[b])).clamp(-1.0, 1.0)
        }
    });
    r = nearest_correlation(r);
    Ok(r)
}

/// Clips negative eigenvalues to zero and rescales back to unit diagonal.
pub fn nearest_correlation(r: DMatrix<f64>) -> DMatrix<f64> {
    let q = r.nrows();
    let sym = (&r + r.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|l| *l >= 0.0) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..q).map(|i| rebuilt[(i, i)].max(1e-300).sqrt()).collect();
    let out = DMatrix::from_fn(q, q, |a, b| {
        if a == b {
            1.0
        } else {
            (rebuilt[(a, b)] / (d[a] * d[b])).clamp(-1.0, 1.0)
        }
    });
    (&out + out.transpose()) * 0.5
}

/// Concatenates sets fitted to the same units into one max-T family. Labels
/// are prefixed with the set name when more than one set is combined.
pub fn combine(sets: &[MarginalSet]) -> Result<MarginalSet> {
    let first = sets
        .first()
        .ok_or_else(|| TrendError::Design("nothing to combine".into()))?;
    if sets.len() == 1 {
        return Ok(first.clone());
    }
    let mut models = Vec::new();
    for set in sets {
        if set.unit_ids.len() != first.unit_ids.len() {
            return Err(TrendError::Alignment { expected: first.unit_ids.len(), found: set.unit_ids.len() });
        }
        if set.unit_ids != first.unit_ids {
            return Err(TrendError::Design(format!("set `{}` orders its units differently", set.name)));
        }
        for m in &set.models {
            let mut m = m.clone();
            m.label = format!("{} {}", set.name, m.label);
            models.push(m);
        }
    }
    let name = sets.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join("+");
    MarginalSet::new(name, models, first.unit_ids.clone())
}
