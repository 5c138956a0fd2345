//! Generalized linear models for proportions and counts fitted by
//! iteratively reweighted least squares (Fisher scoring).

use crate::error::{Result, TrendError};
use crate::linmod::{check_rank, VcovFlavor};
use crate::special::Df;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Binomial,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Identity,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispersionMode {
    /// Dispersion fixed at 1; Wald statistics are referred to the normal.
    #[default]
    Fixed,
    /// Pearson quasi-likelihood dispersion with `n - p` residual df.
    Pearson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Family {
    pub kind: FamilyKind,
    pub link: Link,
    pub dispersion: DispersionMode,
}

impl Family {
    pub fn new(kind: FamilyKind, link: Link, dispersion: DispersionMode) -> Result<Self> {
        let ok = matches!(
            (kind, link),
            (FamilyKind::Binomial, Link::Logit)
                | (FamilyKind::Binomial, Link::Identity)
                | (FamilyKind::Poisson, Link::Log)
        );
        if !ok {
            return Err(TrendError::Usage(format!("{kind:?} family does not support the {link:?} link")));
        }
        Ok(Self { kind, link, dispersion })
    }

    pub fn binomial_logit() -> Self {
        Self { kind: FamilyKind::Binomial, link: Link::Logit, dispersion: DispersionMode::Fixed }
    }

    pub fn binomial_identity() -> Self {
        Self { kind: FamilyKind::Binomial, link: Link::Identity, dispersion: DispersionMode::Fixed }
    }

    pub fn poisson() -> Self {
        Self { kind: FamilyKind::Poisson, link: Link::Log, dispersion: DispersionMode::Fixed }
    }

    pub fn with_dispersion(mut self, dispersion: DispersionMode) -> Self {
        self.dispersion = dispersion;
        self
    }

    fn variance(&self, mu: f64) -> f64 {
        match self.kind {
            FamilyKind::Binomial => mu * (1.0 - mu),
            FamilyKind::Poisson => mu,
        }
    }

    fn link(&self, mu: f64) -> f64 {
        match self.link {
            Link::Logit => (mu / (1.0 - mu)).ln(),
            Link::Identity => mu,
            Link::Log => mu.ln(),
        }
    }

    fn inverse_link(&self, eta: f64) -> f64 {
        match self.link {
            Link::Logit => 1.0 / (1.0 + (-eta).exp()),
            Link::Identity => eta,
            Link::Log => eta.exp(),
        }
    }

    /// `d mu / d eta`
    fn mu_eta(&self, mu: f64) -> f64 {
        match self.link {
            Link::Logit => mu * (1.0 - mu),
            Link::Identity => 1.0,
            Link::Log => mu,
        }
    }

    fn feasible(&self, mu: f64) -> bool {
        match self.kind {
            FamilyKind::Binomial => mu > 0.0 && mu < 1.0,
            FamilyKind::Poisson => mu > 0.0 && mu.is_finite(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self { max_iter: 50, tol: 1e-9, max_halvings: 20 }
    }
}

#[derive(Debug, Clone)]
pub struct GlmFit {
    pub family: Family,
    pub x: DMatrix<f64>,
    /// Observed proportion (binomial) or count (poisson) per unit.
    pub response: DVector<f64>,
    /// Prior weight times number of trials per unit.
    pub case_weights: DVector<f64>,
    pub coef: DVector<f64>,
    pub mu: DVector<f64>,
    /// Inverse expected information at the solution, `(X'WX)^-1`.
    pub bread: DMatrix<f64>,
    pub working_weights: DVector<f64>,
    pub deviance: f64,
    pub pearson_dispersion: f64,
    pub df_residual: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// Fitted binomial probabilities closer than this to 0 or 1 count as a
/// boundary solution, for which Wald covariances are meaningless.
const BOUNDARY_TOL: f64 = 1e-8;

/// Adds one pseudo-success and one pseudo-failure to every group.
pub fn add1_correction(successes: &[f64], trials: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        successes.iter().map(|y| y + 1.0).collect(),
        trials.iter().map(|n| n + 2.0).collect(),
    )
}

fn weighted_ls(x: &DMatrix<f64>, z: &DVector<f64>, w: &DVector<f64>) -> Option<DVector<f64>> {
    let mut xw = x.clone();
    let mut zw = z.clone();
    for i in 0..x.nrows() {
        let s = w[i].sqrt();
        xw.row_mut(i).scale_mut(s);
        zw[i] *= s;
    }
    let qr = xw.qr();
    let qtz = qr.q().transpose() * zw;
    qr.r().solve_upper_triangular(&qtz)
}

/// Fits a GLM by IRLS. `y` holds success counts (with `trials`) for the
/// binomial family and counts for poisson; `prior_weights` multiply each
/// unit's contribution to the likelihood.
pub fn irls_fit(
    x: &DMatrix<f64>,
    y: &[f64],
    trials: Option<&[f64]>,
    prior_weights: Option<&[f64]>,
    family: Family,
    names: &[String],
    opts: GlmOptions,
) -> Result<GlmFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(TrendError::Alignment { expected: n, found: y.len() });
    }
    if n <= p {
        return Err(TrendError::Design(format!("{n} observations cannot support {p} parameters")));
    }
    let trials: Vec<f64> = match (family.kind, trials) {
        (FamilyKind::Binomial, Some(t)) => t.to_vec(),
        (FamilyKind::Binomial, None) => vec![1.0; n],
        (FamilyKind::Poisson, _) => vec![1.0; n],
    };
    let prior: Vec<f64> = prior_weights.map(|w| w.to_vec()).unwrap_or_else(|| vec![1.0; n]);
    if trials.len() != n || prior.len() != n {
        return Err(TrendError::Alignment { expected: n, found: trials.len().min(prior.len()) });
    }
    for i in 0..n {
        if !(prior[i] >= 0.0) || !prior[i].is_finite() {
            return Err(TrendError::Data(format!("prior weight {} at unit {i} is invalid", prior[i])));
        }
        let bad = match family.kind {
            FamilyKind::Binomial => !(trials[i] > 0.0) || !(y[i] >= 0.0) || y[i] > trials[i],
            FamilyKind::Poisson => !(y[i] >= 0.0) || !y[i].is_finite(),
        };
        if bad {
            return Err(TrendError::Data(format!("response {} at unit {i} is outside the family support", y[i])));
        }
    }
    check_rank(x, names)?;

    let response = DVector::from_iterator(n, (0..n).map(|i| y[i] / trials[i]));
    let case_weights = DVector::from_iterator(n, (0..n).map(|i| prior[i] * trials[i]));

    let mu0 = DVector::from_iterator(
        n,
        (0..n).map(|i| match family.kind {
            FamilyKind::Binomial => (y[i] + 0.5) / (trials[i] + 1.0),
            FamilyKind::Poisson => y[i] + 0.5,
        }),
    );
    let eta0 = mu0.map(|m| family.link(m));
    let w0 = DVector::from_iterator(n, (0..n).map(|i| case_weights[i].max(1e-12)));
    let mut coef = weighted_ls(x, &eta0, &w0).ok_or_else(|| TrendError::SingularDesign { column: "?".into() })?;
    let mut mu = (x * &coef).map(|e| family.inverse_link(e));
    if !mu.iter().all(|m| family.feasible(*m)) {
        return Err(TrendError::Infeasible("no valid starting values".into()));
    }
    // use the data-driven start for the first working response
    let mut mu_work = mu0;

    let col_scale: Vec<f64> = (0..p).map(|j| x.column(j).amax().max(1e-300)).collect();
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=opts.max_iter {
        iterations = iter;
        let mut w = DVector::zeros(n);
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let m = mu_work[i];
            let d = family.mu_eta(m);
            let v = family.variance(m);
            w[i] = case_weights[i] * d * d / v;
            z[i] = family.link(m) + (response[i] - m) / d;
        }
        let proposal = weighted_ls(x, &z, &w).ok_or_else(|| TrendError::SingularDesign { column: "?".into() })?;
        let mut step = &proposal - &coef;
        let mut candidate = &coef + &step;
        let mut cand_mu = (x * &candidate).map(|e| family.inverse_link(e));
        let mut halvings = 0;
        while !cand_mu.iter().all(|m| family.feasible(*m)) {
            halvings += 1;
            if halvings > opts.max_halvings {
                return Err(TrendError::Infeasible(format!(
                    "fitted means stayed outside the support after {} step halvings",
                    opts.max_halvings
                )));
            }
            step *= 0.5;
            candidate = &coef + &step;
            cand_mu = (x * &candidate).map(|e| family.inverse_link(e));
        }
        let eta_scale = (x * &candidate).amax() + 1.0;
        let change = (0..p)
            .map(|j| (candidate[j] - coef[j]).abs() * col_scale[j])
            .fold(0.0, f64::max)
            / eta_scale;
        coef = candidate;
        mu = cand_mu;
        mu_work = mu.clone();
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(TrendError::Convergence { iterations, last: coef.iter().copied().collect() });
    }
    if family.kind == FamilyKind::Binomial {
        if let Some(i) = (0..n).find(|&i| case_weights[i] > 0.0 && (mu[i] < BOUNDARY_TOL || mu[i] > 1.0 - BOUNDARY_TOL)) {
            return Err(TrendError::Infeasible(format!(
                "fitted probability {:.3e} at unit {i} lies on the boundary of the parameter space; the add1 correction avoids this",
                mu[i]
            )));
        }
    }

    let mut working_weights = DVector::zeros(n);
    for i in 0..n {
        let d = family.mu_eta(mu[i]);
        working_weights[i] = case_weights[i] * d * d / family.variance(mu[i]);
    }
    let mut info = DMatrix::zeros(p, p);
    for i in 0..n {
        let xi = x.row(i).transpose();
        info += &xi * xi.transpose() * working_weights[i];
    }
    let bread = info
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| info.try_inverse())
        .ok_or_else(|| TrendError::SingularDesign { column: "?".into() })?;

    let df_residual = n - p;
    let mut pearson = 0.0;
    let mut deviance = 0.0;
    for i in 0..n {
        let (r, m, a) = (response[i], mu[i], case_weights[i]);
        pearson += a * (r - m).powi(2) / family.variance(m);
        deviance += 2.0
            * a
            * match family.kind {
                FamilyKind::Binomial => xlogy(r, r / m) + xlogy(1.0 - r, (1.0 - r) / (1.0 - m)),
                FamilyKind::Poisson => xlogy(r, r / m) - (r - m),
            };
    }
    Ok(GlmFit {
        family,
        x: x.clone(),
        response,
        case_weights,
        coef,
        mu,
        bread,
        working_weights,
        deviance,
        pearson_dispersion: pearson / df_residual as f64,
        df_residual,
        converged,
        iterations,
    })
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

impl GlmFit {
    pub fn nobs(&self) -> usize {
        self.x.nrows()
    }

    /// Pearson dispersion `sum (y - mu)^2 / V(mu) / (n - p)`. A zero value
    /// (perfect fit) is returned with a warning.
    pub fn pearson_dispersion(&self) -> Result<f64> {
        if self.df_residual < 1 {
            return Err(TrendError::DegenerateDispersion("no residual degrees of freedom".into()));
        }
        if self.mu.iter().any(|m| self.family.variance(*m) <= 0.0) {
            return Err(TrendError::DegenerateDispersion("zero-variance fitted value".into()));
        }
        if self.pearson_dispersion == 0.0 {
            log::warn!("Pearson dispersion is 0: the model reproduces the data exactly");
        }
        Ok(self.pearson_dispersion)
    }

    /// Dispersion used to scale model-based covariance.
    pub fn dispersion(&self) -> Result<f64> {
        match self.family.dispersion {
            DispersionMode::Fixed => Ok(1.0),
            DispersionMode::Pearson => self.pearson_dispersion(),
        }
    }

    pub fn df(&self) -> Df {
        match self.family.dispersion {
            DispersionMode::Fixed => Df::Infinite,
            DispersionMode::Pearson => Df::Finite(self.df_residual as u32),
        }
    }

    fn score_scale(&self, i: usize) -> f64 {
        let m = self.mu[i];
        self.case_weights[i] * (self.response[i] - m) * self.family.mu_eta(m) / self.family.variance(m)
    }

    /// Per-unit influence on the coefficients: `A^-1 x_i u_i` with `u_i` the
    /// score weight of unit `i` (sandwich flavors), or
    /// `sqrt(phi w_i) A^-1 x_i` for the model-based flavor.
    pub fn influence_contributions(&self, flavor: VcovFlavor) -> Result<DMatrix<f64>> {
        let (n, p) = self.x.shape();
        let phi = match flavor {
            VcovFlavor::Classic => self.dispersion()?,
            _ => 1.0,
        };
        let mut out = DMatrix::zeros(n, p);
        for i in 0..n {
            let xi = self.x.row(i).transpose();
            let base = &self.bread * &xi;
            let scale = match flavor {
                VcovFlavor::Classic => (phi * self.working_weights[i]).sqrt(),
                VcovFlavor::Hc0 => self.score_scale(i),
                VcovFlavor::Hc3 => {
                    let h = self.working_weights[i] * xi.dot(&base);
                    if h >= 1.0 - 1e-12 {
                        return Err(TrendError::DegenerateLeverage { index: i });
                    }
                    self.score_scale(i) / (1.0 - h)
                }
            };
            out.set_row(i, &(base * scale).transpose());
        }
        Ok(out)
    }

    pub fn covariance(&self, flavor: VcovFlavor) -> Result<DMatrix<f64>> {
        match flavor {
            VcovFlavor::Classic => Ok(&self.bread * self.dispersion()?),
            _ => {
                let infl = self.influence_contributions(flavor)?;
                Ok(infl.transpose() * infl)
            }
        }
    }
}
