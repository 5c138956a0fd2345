//! Poly-k mortality adjustment of tumor incidence: animals dying early
//! without a tumor count fractionally, with weight `(time / t_max)^k`.

use crate::design::DoseDesign;
use crate::error::{Result, TrendError};
use crate::glm::{Family, FamilyKind, Link};
use crate::inference::pipeline::{finish, marginal_set};
use crate::inference::{ModelKind, TrendAnalysis, TrendData, TrendOptions};
use crate::mmm::combine;
use serde::{Deserialize, Serialize};

/// One row per animal.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyKRecords {
    pub dose: Vec<f64>,
    /// Time of death, or of terminal sacrifice.
    pub time: Vec<f64>,
    pub tumor: Vec<bool>,
    pub t_max: f64,
}

impl PolyKRecords {
    /// `t_max` defaults to the largest observed time.
    pub fn new(dose: Vec<f64>, time: Vec<f64>, tumor: Vec<f64>, t_max: Option<f64>) -> Result<Self> {
        let n = dose.len();
        if time.len() != n || tumor.len() != n {
            return Err(TrendError::Data("dose, time and tumor columns differ in length".into()));
        }
        if n == 0 {
            return Err(TrendError::Data("no animals".into()));
        }
        let tumor = tumor
            .iter()
            .enumerate()
            .map(|(i, t)| match *t {
                v if v == 0.0 => Ok(false),
                v if v == 1.0 => Ok(true),
                v => Err(TrendError::Data(format!("tumor status {v} of animal {} is not 0 or 1", i + 1))),
            })
            .collect::<Result<Vec<bool>>>()?;
        let t_max = t_max.unwrap_or_else(|| time.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        for (i, t) in time.iter().enumerate() {
            if !(*t > 0.0) {
                return Err(TrendError::Data(format!("time {t} of animal {} must be positive", i + 1)));
            }
            if *t > t_max {
                return Err(TrendError::Data(format!("time {t} of animal {} exceeds t_max {t_max}", i + 1)));
            }
        }
        Ok(Self { dose, time, tumor, t_max })
    }

    pub fn len(&self) -> usize {
        self.dose.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dose.is_empty()
    }
}

/// Weight 1 for tumor-bearing animals, `(time / t_max)^k` otherwise.
pub fn poly_k_weights(records: &PolyKRecords, k: f64) -> Result<Vec<f64>> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(TrendError::Usage(format!("poly-k exponent must be positive, got {k}")));
    }
    Ok(records
        .time
        .iter()
        .zip(&records.tumor)
        .map(|(t, tumor)| if *tumor { 1.0 } else { (t / records.t_max).powf(k) })
        .collect())
}

/// Per-group adjusted sample size and incidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedGroup {
    pub dose: f64,
    pub animals: usize,
    pub tumors: usize,
    /// Sum of poly-k weights.
    pub n_adjusted: f64,
    pub p_adjusted: f64,
    pub p_crude: f64,
}

pub fn adjusted_counts(records: &PolyKRecords, k: f64) -> Result<Vec<AdjustedGroup>> {
    let w = poly_k_weights(records, k)?;
    let design = DoseDesign::from_unit_doses(&records.dose)?;
    design
        .doses()
        .iter()
        .map(|&d| {
            let members: Vec<usize> = (0..records.len()).filter(|&i| records.dose[i] == d).collect();
            let n_adjusted: f64 = members.iter().map(|&i| w[i]).sum();
            let tumors = members.iter().filter(|&&i| records.tumor[i]).count();
            if !(n_adjusted > 0.0) {
                return Err(TrendError::Data(format!("dose group {d} has zero adjusted sample size")));
            }
            Ok(AdjustedGroup {
                dose: d,
                animals: members.len(),
                tumors,
                n_adjusted,
                p_adjusted: tumors as f64 / n_adjusted,
                p_crude: tumors as f64 / members.len() as f64,
            })
        })
        .collect()
}

/// Joint max-T test over the Tukey and contrast models of every poly-k
/// weighting in `ks`, each fitted as a weighted binomial identity-link GLM
/// to the animal-level data. The model family in `opts` is replaced by the
/// binomial identity link, keeping its dispersion mode.
pub fn polyk_trend(records: &PolyKRecords, ks: &[f64], opts: &TrendOptions) -> Result<TrendAnalysis> {
    if ks.is_empty() {
        return Err(TrendError::Usage("at least one poly-k exponent is required".into()));
    }
    let family = match opts.model {
        ModelKind::Glm(f) if f.kind == FamilyKind::Binomial && f.link == Link::Identity => f,
        ModelKind::Glm(f) => Family::binomial_identity().with_dispersion(f.dispersion),
        ModelKind::Gaussian => Family::binomial_identity(),
    };
    let opts = TrendOptions { model: ModelKind::Glm(family), ..opts.clone() };
    let n = records.len();
    let tumor: Vec<f64> = records.tumor.iter().map(|t| *t as u8 as f64).collect();
    let mut sets = Vec::with_capacity(ks.len());
    let mut first = None;
    for &k in ks {
        let data = TrendData::new(records.dose.clone(), tumor.clone())
            .with_trials(vec![1.0; n])
            .with_weights(poly_k_weights(records, k)?);
        let (set, design, high) = marginal_set(&format!("poly-{k}"), &data, &opts)?;
        sets.push(set);
        first.get_or_insert((design, high));
    }
    let (design, high) = first.expect("non-empty");
    finish(combine(&sets)?, design, high, &opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::tukey_williams_joint;
    use crate::linmod::VcovFlavor;
    use approx::assert_abs_diff_eq;

    fn toy() -> PolyKRecords {
        // four groups of six animals with staggered deaths
        let mut dose = Vec::new();
        let mut time = Vec::new();
        let mut tumor = Vec::new();
        let pattern = [
            [(730.0, 0.0), (500.0, 0.0), (730.0, 1.0), (650.0, 0.0), (730.0, 0.0), (400.0, 0.0)],
            [(730.0, 0.0), (610.0, 1.0), (730.0, 0.0), (365.0, 0.0), (730.0, 1.0), (700.0, 0.0)],
            [(550.0, 1.0), (730.0, 0.0), (480.0, 0.0), (730.0, 1.0), (600.0, 0.0), (730.0, 1.0)],
            [(730.0, 1.0), (300.0, 0.0), (620.0, 1.0), (730.0, 1.0), (690.0, 0.0), (510.0, 1.0)],
        ];
        for (g, animals) in pattern.iter().enumerate() {
            for (t, y) in animals {
                dose.push([0.0, 10.0, 30.0, 100.0][g]);
                time.push(*t);
                tumor.push(*y);
            }
        }
        PolyKRecords::new(dose, time, tumor, Some(730.0)).unwrap()
    }

    #[test]
    fn weight_rules() {
        let r = PolyKRecords::new(vec![0.0, 0.0, 1.0], vec![365.0, 100.0, 730.0], vec![0.0, 1.0, 0.0], Some(730.0)).unwrap();
        assert_eq!(poly_k_weights(&r, 3.0).unwrap(), vec![0.125, 1.0, 1.0]);
        assert!(poly_k_weights(&r, 0.0).is_err());
        assert!(PolyKRecords::new(vec![0.0], vec![800.0], vec![0.0], Some(730.0)).is_err());
        assert!(PolyKRecords::new(vec![0.0], vec![800.0], vec![2.0], None).is_err());
    }

    #[test]
    fn adjusted_counts_by_hand() {
        let r = PolyKRecords::new(
            vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
            vec![365.0, 365.0, 365.0, 100.0, 200.0, 730.0, 730.0],
            vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
            Some(730.0),
        )
        .unwrap();
        let g = adjusted_counts(&r, 3.0).unwrap();
        assert_abs_diff_eq!(g[0].n_adjusted, 0.375, epsilon = 1e-15);
        assert_eq!(g[0].p_adjusted, 0.0);
        assert_abs_diff_eq!(g[1].p_adjusted, 0.5, epsilon = 1e-15);
        assert_eq!(g[1].p_crude, 0.5);
    }

    #[test]
    fn adjusted_incidence_never_below_crude() {
        let r = toy();
        for k in [0.5, 1.0, 3.0, 6.0] {
            for g in adjusted_counts(&r, k).unwrap() {
                assert!(g.p_adjusted >= g.p_crude);
                assert!(g.n_adjusted <= g.animals as f64);
            }
        }
        let w3 = poly_k_weights(&r, 3.0).unwrap();
        let w6 = poly_k_weights(&r, 6.0).unwrap();
        assert!(w3.iter().zip(&w6).all(|(a, b)| b <= a));
    }

    #[test]
    fn two_exponents_give_twelve_rows() {
        let res = polyk_trend(&toy(), &[3.0, 6.0], &TrendOptions::default()).unwrap();
        let inf = &res.inference;
        assert_eq!(inf.len(), 12);
        assert_eq!(inf.labels[0], "poly-3 Tukey: arithmetic");
        assert_eq!(inf.labels[11], "poly-6 Williams: (100+30+10)/3-0");
        // the cell-means contrasts are differences of adjusted proportions
        let g = adjusted_counts(&toy(), 3.0).unwrap();
        assert_abs_diff_eq!(inf.estimates[3], g[3].p_adjusted - g[0].p_adjusted, epsilon = 1e-9);
    }

    #[test]
    fn full_survival_matches_unadjusted() {
        let r = toy();
        let all = PolyKRecords::new(r.dose.clone(), vec![730.0; r.len()], r.tumor.iter().map(|t| *t as u8 as f64).collect(), None).unwrap();
        let opts = TrendOptions { vcov: VcovFlavor::Hc0, ..TrendOptions::default() };
        let adjusted = polyk_trend(&all, &[3.0], &opts).unwrap().inference;
        let data = TrendData::new(all.dose.clone(), all.tumor.iter().map(|t| *t as u8 as f64).collect()).with_trials(vec![1.0; all.len()]);
        let plain = tukey_williams_joint(&data, &TrendOptions { model: ModelKind::Glm(Family::binomial_identity()), ..opts }).unwrap().inference;
        for j in 0..plain.len() {
            assert_abs_diff_eq!(adjusted.t_stats[j], plain.t_stats[j], epsilon = 1e-10);
            assert_abs_diff_eq!(adjusted.adjusted_p[j], plain.adjusted_p[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn small_exponent_approaches_crude() {
        let r = toy();
        let near = polyk_trend(&r, &[1e-9], &TrendOptions::default()).unwrap().inference;
        let all = PolyKRecords::new(r.dose.clone(), vec![730.0; r.len()], r.tumor.iter().map(|t| *t as u8 as f64).collect(), None).unwrap();
        let crude = polyk_trend(&all, &[1.0], &TrendOptions::default()).unwrap().inference;
        for j in 0..crude.len() {
            assert_abs_diff_eq!(near.t_stats[j], crude.t_stats[j], epsilon = 1e-6);
        }
    }
}
