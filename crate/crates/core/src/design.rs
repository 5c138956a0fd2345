//! Dose designs, contrast matrices and dose metameters.

use crate::error::{Result, TrendError};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// Per-group dose levels and sample sizes of a randomized one-way layout.
/// Group 0 is the control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseDesign {
    doses: Vec<f64>,
    labels: Vec<String>,
    n: Vec<usize>,
}

impl DoseDesign {
    pub fn new(doses: Vec<f64>, labels: Vec<String>, n: Vec<usize>) -> Result<Self> {
        if doses.len() < 2 {
            return Err(TrendError::Design(format!(
                "at least 2 dose groups are required, got {}",
                doses.len()
            )));
        }
        if labels.len() != doses.len() || n.len() != doses.len() {
            return Err(TrendError::Design(
                "doses, labels and group sizes differ in length".into(),
            ));
        }
        if let Some(d) = doses.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(TrendError::Design(format!("invalid dose {d}; doses must be finite and non-negative")));
        }
        if doses.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TrendError::Design("doses must be strictly increasing".into()));
        }
        if n.iter().any(|&ni| ni == 0) {
            return Err(TrendError::Design("every group needs at least one unit".into()));
        }
        Ok(Self { doses, labels, n })
    }

    /// Builds the design from one dose value per experimental unit.
    pub fn from_unit_doses(unit_doses: &[f64]) -> Result<Self> {
        let mut levels: Vec<f64> = unit_doses.to_vec();
        if let Some(d) = levels.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(TrendError::Design(format!("invalid dose {d}; doses must be finite and non-negative")));
        }
        levels.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        levels.dedup();
        let n = levels
            .iter()
            .map(|l| unit_doses.iter().filter(|d| *d == l).count())
            .collect();
        let labels = levels.iter().map(|d| format_dose(*d)).collect();
        Self::new(levels, labels, n)
    }

    pub fn doses(&self) -> &[f64] {
        &self.doses
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn sizes(&self) -> &[usize] {
        &self.n
    }

    /// Number of groups including the control.
    pub fn groups(&self) -> usize {
        self.doses.len()
    }

    /// Index of the group whose dose equals `dose`.
    pub fn group_of(&self, dose: f64) -> Option<usize> {
        self.doses.iter().position(|d| *d == dose)
    }
}

pub fn format_dose(d: f64) -> String {
    format!("{d}")
}

/// Rows of zero-sum coefficients over the groups of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastMatrix {
    rows: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl ContrastMatrix {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(TrendError::Design("a contrast matrix needs at least one row".into()));
        }
        if labels.len() != rows.len() {
            return Err(TrendError::Design("one label per contrast row is required".into()));
        }
        let width = rows[0].len();
        for (row, label) in rows.iter().zip(&labels) {
            if row.len() != width {
                return Err(TrendError::Design(format!("contrast `{label}` has the wrong width")));
            }
            let sum: f64 = row.iter().sum();
            if sum.abs() > 1e-12 {
                return Err(TrendError::Design(format!("contrast `{label}` sums to {sum}, not 0")));
            }
            if row.iter().all(|c| *c == 0.0) {
                return Err(TrendError::Design(format!("contrast `{label}` is all zero")));
            }
        }
        Ok(Self { rows, labels })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows[0].len()
    }
}

/// Williams-type contrasts: row `m` compares the sample-size weighted mean of
/// the `m` highest dose groups with the control.
pub fn williams_contrasts(design: &DoseDesign) -> Result<ContrastMatrix> {
    let g = design.groups();
    let k = g - 1;
    let mut rows = Vec::with_capacity(k);
    let mut labels = Vec::with_capacity(k);
    for m in 1..=k {
        let top = (g - m)..g;
        let total: usize = design.n[top.clone()].iter().sum();
        let mut row = vec![0.0; g];
        row[0] = -1.0;
        for i in top.clone() {
            row[i] = design.n[i] as f64 / total as f64;
        }
        rows.push(row);
        let pooled: Vec<&str> = top.rev().map(|i| design.labels[i].as_str()).collect();
        labels.push(if m == 1 {
            format!("{}-{}", pooled[0], design.labels[0])
        } else {
            format!("({})/{}-{}", pooled.join("+"), m, design.labels[0])
        });
    }
    ContrastMatrix::new(rows, labels)
}

/// Many-to-one comparisons with the control, highest dose first.
pub fn dunnett_contrasts(design: &DoseDesign) -> Result<ContrastMatrix> {
    let g = design.groups();
    let mut rows = Vec::with_capacity(g - 1);
    let mut labels = Vec::with_capacity(g - 1);
    for i in (1..g).rev() {
        let mut row = vec![0.0; g];
        row[0] = -1.0;
        row[i] = 1.0;
        rows.push(row);
        labels.push(format!("{}-{}", design.labels[i], design.labels[0]));
    }
    ContrastMatrix::new(rows, labels)
}

/// Dunnett rows followed by the Williams rows that are not already present.
pub fn combined_contrasts(design: &DoseDesign) -> Result<ContrastMatrix> {
    let dunnett = dunnett_contrasts(design)?;
    let williams = williams_contrasts(design)?;
    let mut rows = dunnett.rows.clone();
    let mut labels = dunnett.labels.clone();
    for (row, label) in williams.rows.iter().zip(&williams.labels) {
        if !rows.iter().any(|r| same_direction(r, row)) {
            rows.push(row.clone());
            labels.push(label.clone());
        }
    }
    ContrastMatrix::new(rows, labels)
}

fn same_direction(a: &[f64], b: &[f64]) -> bool {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    a.iter()
        .zip(b)
        .all(|(x, y)| (x / na - y / nb).abs() <= 1e-10)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContrastType {
    Williams,
    Dunnett,
    Both,
}

impl ContrastType {
    pub fn contrasts(self, design: &DoseDesign) -> Result<ContrastMatrix> {
        match self {
            ContrastType::Williams => williams_contrasts(design),
            ContrastType::Dunnett => dunnett_contrasts(design),
            ContrastType::Both => combined_contrasts(design),
        }
    }

    /// Row-label prefix used in reports.
    pub fn label_prefix(self) -> &'static str {
        match self {
            ContrastType::Williams => "Williams",
            ContrastType::Dunnett => "Dunnett",
            ContrastType::Both => "Dunnett/Williams",
        }
    }
}

impl FromStr for ContrastType {
    type Err = TrendError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "williams" => Ok(ContrastType::Williams),
            "dunnett" => Ok(ContrastType::Dunnett),
            "both" => Ok(ContrastType::Both),
            other => Err(TrendError::Usage(format!("unknown contrast type `{other}`"))),
        }
    }
}

/// Dose scores used as regression covariates, one entry per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseMetameters {
    pub ari: Vec<f64>,
    pub ord: Vec<f64>,
    pub arilog: Vec<f64>,
}

impl DoseMetameters {
    pub fn scores(&self, scaling: Scaling) -> Option<&[f64]> {
        match scaling {
            Scaling::Ari => Some(&self.ari),
            Scaling::Ord => Some(&self.ord),
            Scaling::Arilog => Some(&self.arilog),
            Scaling::Treat => None,
        }
    }
}

/// Arithmetic, ordinal and log-scale dose scores. A zero control dose is
/// replaced by `d1^2 / d2` on the log scale (one log-step below the lowest
/// active dose), or `d1 / 10` when only one active dose exists.
pub fn dose_metameters(design: &DoseDesign) -> Result<DoseMetameters> {
    let doses = &design.doses;
    if doses.iter().any(|d| *d < 0.0) {
        return Err(TrendError::Design("negative dose".into()));
    }
    let ari = doses.clone();
    let ord = (0..doses.len()).map(|i| i as f64).collect();
    let mut logged = doses.clone();
    if logged[0] == 0.0 {
        logged[0] = if logged.len() >= 3 {
            logged[1] * logged[1] / logged[2]
        } else {
            logged[1] / 10.0
        };
    }
    let arilog = logged.iter().map(|d| d.ln()).collect();
    Ok(DoseMetameters { ari, ord, arilog })
}

/// How the dose enters a marginal model: as one of three regression scores,
/// or as a treatment factor tested with contrasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    Ari,
    Ord,
    Arilog,
    Treat,
}

impl Scaling {
    pub fn label(self) -> &'static str {
        match self {
            Scaling::Ari => "Tukey: arithmetic",
            Scaling::Ord => "Tukey: ordinal",
            Scaling::Arilog => "Tukey: ari-logarithmic",
            Scaling::Treat => "treatment",
        }
    }
}

impl FromStr for Scaling {
    type Err = TrendError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ari" => Ok(Scaling::Ari),
            "ord" => Ok(Scaling::Ord),
            "arilog" => Ok(Scaling::Arilog),
            "treat" => Ok(Scaling::Treat),
            other => Err(TrendError::Usage(format!("unknown scaling `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn balanced(doses: &[f64], n: usize) -> DoseDesign {
        DoseDesign::new(
            doses.to_vec(),
            doses.iter().map(|d| format_dose(*d)).collect(),
            vec![n; doses.len()],
        )
        .unwrap()
    }

    fn bun_design() -> DoseDesign {
        balanced(&[0.0, 62.5, 125.0, 250.0, 500.0, 1000.0], 10)
    }

    #[test]
    fn williams_balanced_k2() {
        let c = williams_contrasts(&balanced(&[0.0, 10.0, 50.0], 5)).unwrap();
        assert_eq!(c.rows(), &[vec![-1.0, 0.0, 1.0], vec![-1.0, 0.5, 0.5]]);
    }

    #[test]
    fn williams_bun_labels() {
        let c = williams_contrasts(&bun_design()).unwrap();
        assert_eq!(c.labels()[0], "1000-0");
        assert_eq!(c.labels()[1], "(1000+500)/2-0");
        assert_eq!(c.labels()[4], "(1000+500+250+125+62.5)/5-0");
        for (m, row) in c.rows().iter().enumerate() {
            assert_eq!(row.iter().filter(|x| **x != 0.0).count(), m + 2);
        }
    }

    #[test]
    fn williams_unbalanced_uses_sample_sizes() {
        let d = DoseDesign::new(
            vec![0.0, 1.0, 2.0],
            vec!["0".into(), "1".into(), "2".into()],
            vec![10, 5, 15],
        )
        .unwrap();
        let c = williams_contrasts(&d).unwrap();
        assert_abs_diff_eq!(c.rows()[1][1], 5.0 / 20.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.rows()[1][2], 15.0 / 20.0, epsilon = 1e-15);
        assert_eq!(c.rows()[1][0], -1.0);
    }

    #[test]
    fn dunnett_rows() {
        let c = dunnett_contrasts(&balanced(&[0.0, 10.0, 50.0], 4)).unwrap();
        assert_eq!(c.rows(), &[vec![-1.0, 0.0, 1.0], vec![-1.0, 1.0, 0.0]]);
        let c1 = dunnett_contrasts(&balanced(&[0.0, 1.0], 4)).unwrap();
        assert_eq!(c1.rows(), &[vec![-1.0, 1.0]]);
        let c3 = dunnett_contrasts(&balanced(&[0.0, 1.0, 2.0, 3.0], 4)).unwrap();
        assert_eq!(c3.len(), 3);
    }

    #[test]
    fn combined_deduplicates() {
        let c = combined_contrasts(&balanced(&[0.0, 10.0, 50.0], 4)).unwrap();
        assert_eq!(
            c.rows(),
            &[vec![-1.0, 0.0, 1.0], vec![-1.0, 1.0, 0.0], vec![-1.0, 0.5, 0.5]]
        );
        assert_eq!(combined_contrasts(&balanced(&[0.0, 1.0], 3)).unwrap().len(), 1);
        assert_eq!(combined_contrasts(&balanced(&[0.0, 1.0, 2.0, 3.0], 3)).unwrap().len(), 5);
    }

    #[test]
    fn design_rejects_bad_input() {
        assert!(DoseDesign::new(vec![0.0], vec!["0".into()], vec![3]).is_err());
        assert!(DoseDesign::new(vec![0.0, -1.0], vec!["a".into(), "b".into()], vec![1, 1]).is_err());
        assert!(DoseDesign::new(vec![1.0, 1.0], vec!["a".into(), "b".into()], vec![1, 1]).is_err());
        assert!(DoseDesign::new(vec![0.0, 1.0], vec!["a".into(), "b".into()], vec![1, 0]).is_err());
        assert!(DoseDesign::from_unit_doses(&[0.0, -2.0, 1.0]).is_err());
    }

    #[test]
    fn bun_arilog_is_geometric() {
        let m = dose_metameters(&bun_design()).unwrap();
        assert_abs_diff_eq!(m.arilog[0], 31.25f64.ln(), epsilon = 1e-14);
        for w in m.arilog.windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], 2f64.ln(), epsilon = 1e-12);
        }
        assert_eq!(m.ari, bun_design().doses().to_vec());
    }

    #[test]
    fn ordinal_scores() {
        let m = dose_metameters(&balanced(&[0.0, 10.0, 50.0], 2)).unwrap();
        assert_eq!(m.ord, vec![0.0, 1.0, 2.0]);
        let single = dose_metameters(&balanced(&[0.0, 40.0], 2)).unwrap();
        assert_abs_diff_eq!(single.arilog[0], 4f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn from_unit_doses_counts_groups() {
        let d = DoseDesign::from_unit_doses(&[10.0, 0.0, 0.0, 10.0, 50.0]).unwrap();
        assert_eq!(d.doses(), &[0.0, 10.0, 50.0]);
        assert_eq!(d.sizes(), &[2, 2, 1]);
        assert_eq!(d.group_of(50.0), Some(2));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn contrast_rows_sum_to_zero(sizes in proptest::collection::vec(1usize..30, 2..8)) {
                let doses: Vec<f64> = (0..sizes.len()).map(|i| i as f64 * 3.0).collect();
                let labels = doses.iter().map(|d| format_dose(*d)).collect();
                let d = DoseDesign::new(doses, labels, sizes.clone()).unwrap();
                let w = williams_contrasts(&d).unwrap();
                let du = dunnett_contrasts(&d).unwrap();
                let both = combined_contrasts(&d).unwrap();
                for row in w.rows().iter().chain(du.rows()).chain(both.rows()) {
                    prop_assert!(row.iter().sum::<f64>().abs() <= 1e-12);
                }
                for row in du.rows() {
                    prop_assert_eq!(row.iter().filter(|x| **x != 0.0).count(), 2);
                }
                prop_assert_eq!(both.len(), w.len() + du.len() - 1);
                for row in w.rows().iter().chain(du.rows()) {
                    prop_assert!(both.rows().iter().any(|r| same_direction(r, row)));
                }
            }
        }
    }
}
