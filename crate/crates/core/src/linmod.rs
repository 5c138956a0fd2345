//! Ordinary least squares with classical and heteroscedasticity-consistent
//! covariance, and per-unit influence contributions for joint inference.

use crate::error::{Result, TrendError};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// Singular values below this fraction of the largest flag rank deficiency.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VcovFlavor {
    /// Model-based covariance (`S^2 (X'X)^-1` for least squares).
    Classic,
    /// White's sandwich estimator.
    #[default]
    Hc0,
    /// Sandwich with squared residuals inflated by `(1 - h_ii)^-2`.
    Hc3,
}

impl FromStr for VcovFlavor {
    type Err = TrendError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classic" => Ok(VcovFlavor::Classic),
            "hc0" | "sandwich" => Ok(VcovFlavor::Hc0),
            "hc3" => Ok(VcovFlavor::Hc3),
            other => Err(TrendError::Usage(format!("unknown covariance flavor `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub coef: DVector<f64>,
    pub residuals: DVector<f64>,
    pub df_residual: usize,
    pub xtx_inv: DMatrix<f64>,
    pub sigma2: f64,
    pub leverage: DVector<f64>,
}

/// Checks `x` for full column rank, naming the first column that makes the
/// leading block rank deficient.
pub(crate) fn check_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let ok = |m: DMatrix<f64>| {
        let sv = m.singular_values();
        let max = sv.max();
        max > 0.0 && sv.min() > RANK_TOL * max
    };
    if ok(x.clone()) {
        return Ok(());
    }
    for j in 0..x.ncols() {
        if !ok(x.columns(0, j + 1).into_owned()) {
            let column = names.get(j).cloned().unwrap_or_else(|| format!("#{j}"));
            return Err(TrendError::SingularDesign { column });
        }
    }
    Err(TrendError::SingularDesign { column: "?".into() })
}

/// Least-squares fit through a Householder QR factorization of `x`.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<LinearFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(TrendError::Alignment { expected: n, found: y.len() });
    }
    if n <= p {
        return Err(TrendError::Design(format!(
            "{n} observations cannot support {p} parameters"
        )));
    }
    check_rank(x, names)?;
    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| TrendError::SingularDesign { column: "?".into() })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| TrendError::SingularDesign { column: "?".into() })?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let residuals = y - x * &coef;
    let df_residual = n - p;
    let sigma2 = residuals.norm_squared() / df_residual as f64;
    let leverage = DVector::from_iterator(n, q.row_iter().map(|row| row.norm_squared()));
    Ok(LinearFit {
        x: x.clone(),
        y: y.clone(),
        coef,
        residuals,
        df_residual,
        xtx_inv,
        sigma2,
        leverage,
    })
}

impl LinearFit {
    pub fn fitted(&self) -> DVector<f64> {
        &self.x * &self.coef
    }

    pub fn nobs(&self) -> usize {
        self.y.len()
    }

    /// Per-unit influence on the coefficients; row `i` belongs to unit `i`.
    ///
    /// For the sandwich flavors row `i` is `(X'X)^-1 x_i e_i` (HC3 divides by
    /// `1 - h_ii`), so the cross-product of the rows is the sandwich
    /// covariance. The classic flavor uses `S (X'X)^-1 x_i`, whose
    /// cross-product is `S^2 (X'X)^-1`.
    pub fn influence_contributions(&self, flavor: VcovFlavor) -> Result<DMatrix<f64>> {
        let (n, p) = self.x.shape();
        let sigma = self.sigma2.sqrt();
        let mut out = DMatrix::zeros(n, p);
        for i in 0..n {
            let scale = match flavor {
                VcovFlavor::Classic => sigma,
                VcovFlavor::Hc0 => self.residuals[i],
                VcovFlavor::Hc3 => {
                    let h = self.leverage[i];
                    if h >= 1.0 - 1e-12 {
                        return Err(TrendError::DegenerateLeverage { index: i });
                    }
                    self.residuals[i] / (1.0 - h)
                }
            };
            let xi = self.x.row(i).transpose();
            let row = &self.xtx_inv * xi * scale;
            out.set_row(i, &row.transpose());
        }
        Ok(out)
    }

    pub fn covariance(&self, flavor: VcovFlavor) -> Result<DMatrix<f64>> {
        match flavor {
            VcovFlavor::Classic => Ok(&self.xtx_inv * self.sigma2),
            _ => {
                let infl = self.influence_contributions(flavor)?;
                Ok(infl.transpose() * infl)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("x{j}")).collect()
    }

    fn two_group() -> LinearFit {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![0.0, 2.0, 2.0, 4.0]);
        ols_fit(&x, &y, &names(2)).unwrap()
    }

    #[test]
    fn intercept_only() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let fit = ols_fit(&x, &y, &names(1)).unwrap();
        assert_abs_diff_eq!(fit.coef[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.sigma2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_group_slope_and_variance() {
        let fit = two_group();
        assert_abs_diff_eq!(fit.coef[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.sigma2, 2.0, epsilon = 1e-12);
        assert_eq!(fit.df_residual, 2);
    }

    #[test]
    fn cell_means_fit_group_means() {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 6.0, 10.0]);
        let fit = ols_fit(&x, &y, &names(2)).unwrap();
        assert_abs_diff_eq!(fit.coef[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coef[1], 7.0, epsilon = 1e-12);
        let fitted = fit.fitted();
        assert_abs_diff_eq!(fitted[3], 7.0, epsilon = 1e-12);
        // var(mean_i) = S^2 / n_i
        let cov = fit.covariance(VcovFlavor::Classic).unwrap();
        assert_abs_diff_eq!(cov[(0, 0)], fit.sigma2 / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cov[(1, 1)], fit.sigma2 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cov[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn rank_deficiency_names_column() {
        let x = DMatrix::from_row_slice(4, 3, &[
            1.0, 1.0, 2.0, //
            1.0, 2.0, 4.0, //
            1.0, 3.0, 6.0, //
            1.0, 4.0, 8.0,
        ]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 5.0]);
        let names = vec!["(Intercept)".to_string(), "dose".into(), "double".into()];
        match ols_fit(&x, &y, &names) {
            Err(TrendError::SingularDesign { column }) => assert_eq!(column, "double"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hc0_equal_residual_magnitudes() {
        // balanced two groups, |e_i| = 1 everywhere: HC0 diag = classic * (n - p) / n
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 4.0, 6.0]);
        let fit = ols_fit(&x, &y, &names(2)).unwrap();
        let classic = fit.covariance(VcovFlavor::Classic).unwrap();
        let hc0 = fit.covariance(VcovFlavor::Hc0).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(hc0[(j, j)], classic[(j, j)] * 2.0 / 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_residuals_give_zero_covariance() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let fit = ols_fit(&x, &y, &names(2)).unwrap();
        for flavor in [VcovFlavor::Classic, VcovFlavor::Hc0, VcovFlavor::Hc3] {
            let cov = fit.covariance(flavor).unwrap();
            assert!(cov.iter().all(|v| v.abs() < 1e-20), "{flavor:?}");
        }
    }

    #[test]
    fn influence_properties() {
        let x = DMatrix::from_row_slice(6, 2, &[
            1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0, 1.0, 5.0,
        ]);
        let y = DVector::from_vec(vec![0.3, 1.9, 2.2, 2.8, 5.1, 4.4]);
        let fit = ols_fit(&x, &y, &names(2)).unwrap();
        let infl = fit.influence_contributions(VcovFlavor::Hc0).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(infl.column(j).sum(), 0.0, epsilon = 1e-10);
        }
        let hc0 = fit.covariance(VcovFlavor::Hc0).unwrap();
        let manual = {
            let mut meat = DMatrix::zeros(2, 2);
            for i in 0..6 {
                let xi = x.row(i).transpose();
                meat += &xi * xi.transpose() * fit.residuals[i].powi(2);
            }
            &fit.xtx_inv * meat * &fit.xtx_inv
        };
        assert!((hc0 - manual).abs().max() < 1e-12);
        let hc3 = fit.covariance(VcovFlavor::Hc3).unwrap();
        let hc0 = fit.covariance(VcovFlavor::Hc0).unwrap();
        assert!(hc3[(0, 0)] >= hc0[(0, 0)] && hc3[(1, 1)] >= hc0[(1, 1)]);
    }

    #[test]
    fn centered_single_predictor_influence() {
        // x centered at 0: slope influence of unit i = (x_i - xbar) e_i / Sxx
        let x = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 1.0, 0.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![0.0, 2.0, 1.0]);
        let fit = ols_fit(&x, &y, &names(2)).unwrap();
        // hand: slope = 0.5, intercept = 1, residuals (-0.5, 1, -0.5), Sxx = 2
        assert_abs_diff_eq!(fit.coef[1], 0.5, epsilon = 1e-12);
        let infl = fit.influence_contributions(VcovFlavor::Hc0).unwrap();
        let expected = [0.25, 0.0, -0.25];
        for i in 0..3 {
            assert_abs_diff_eq!(infl[(i, 1)], expected[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn hc3_rejects_unit_leverage() {
        // third observation alone determines its own group mean
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let fit = ols_fit(&x, &y, &names(2)).unwrap();
        assert!(matches!(
            fit.influence_contributions(VcovFlavor::Hc3),
            Err(TrendError::DegenerateLeverage { index: 2 })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reconstruction_and_orthogonality(
                ys in proptest::collection::vec(-50.0f64..50.0, 8),
                xs in proptest::collection::vec(0.0f64..1000.0, 8),
            ) {
                prop_assume!(xs.iter().any(|v| (v - xs[0]).abs() > 1.0));
                let mut data = Vec::new();
                for v in &xs { data.push(1.0); data.push(*v); }
                let x = DMatrix::from_row_slice(8, 2, &data);
                let y = DVector::from_vec(ys);
                let fit = ols_fit(&x, &y, &names(2)).unwrap();
                let recon = fit.fitted() + &fit.residuals;
                for i in 0..8 {
                    prop_assert!((recon[i] - y[i]).abs() <= 1e-10 * y[i].abs().max(1.0));
                }
                let scale = y.norm().max(1.0) * x.norm();
                let ortho = x.transpose() * &fit.residuals;
                prop_assert!(ortho.abs().max() <= 1e-8 * scale);
            }
        }
    }
}
