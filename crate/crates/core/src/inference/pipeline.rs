use super::{downturn_guard, max_t_test, simultaneous_bounds, Alternative, DfRule, DownturnDecision, JointInference, SingleTest};
use crate::design::{dose_metameters, ContrastType, DoseDesign, Scaling};
use crate::error::{Result, TrendError};
use crate::glm::{add1_correction, irls_fit, Family, FamilyKind, GlmOptions, Link};
use crate::linmod::{ols_fit, VcovFlavor};
use crate::mmm::{project_influence, EffectScale, MarginalModel, MarginalSet};
use crate::mvt::MvtOptions;
use crate::special::Df;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// One row per experimental unit. For binomial models `response` holds
/// success counts out of `trials`; for Poisson models it holds counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrendData {
    pub dose: Vec<f64>,
    pub response: Vec<f64>,
    pub trials: Option<Vec<f64>>,
    /// Prior weights, used by GLM fits only.
    pub weights: Option<Vec<f64>>,
    pub covariates: Vec<(String, Vec<f64>)>,
    pub unit_ids: Option<Vec<String>>,
}

impl TrendData {
    pub fn new(dose: Vec<f64>, response: Vec<f64>) -> Self {
        Self { dose, response, ..Self::default() }
    }

    pub fn with_trials(mut self, trials: Vec<f64>) -> Self {
        self.trials = Some(trials);
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn with_covariate(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.covariates.push((name.into(), values));
        self
    }

    pub fn len(&self) -> usize {
        self.dose.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dose.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        let check = |what: &str, len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(TrendError::Data(format!("{what} has {len} entries, dose has {n}")))
            }
        };
        check("response", self.response.len())?;
        if let Some(t) = &self.trials {
            check("trials", t.len())?;
        }
        if let Some(w) = &self.weights {
            check("weights", w.len())?;
        }
        if let Some(ids) = &self.unit_ids {
            check("unit ids", ids.len())?;
        }
        for (name, v) in &self.covariates {
            check(name, v.len())?;
        }
        if let Some(bad) = self.response.iter().find(|v| !v.is_finite()) {
            return Err(TrendError::Data(format!("non-finite response {bad}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Gaussian,
    Glm(Family),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendOptions {
    pub scalings: Vec<Scaling>,
    pub ctype: ContrastType,
    pub vcov: VcovFlavor,
    pub df_rule: DfRule,
    pub alternative: Alternative,
    pub alpha: f64,
    pub model: ModelKind,
    /// Add one pseudo success and one pseudo failure per dose group
    /// (binomial models only).
    pub add1: bool,
    pub mvt: MvtOptions,
    #[serde(skip)]
    pub glm: GlmOptions,
}

impl Default for TrendOptions {
    fn default() -> Self {
        Self {
            scalings: vec![Scaling::Ari, Scaling::Ord, Scaling::Arilog, Scaling::Treat],
            ctype: ContrastType::Williams,
            vcov: VcovFlavor::Hc0,
            df_rule: DfRule::MinMarginal,
            alternative: Alternative::Greater,
            alpha: 0.05,
            model: ModelKind::Gaussian,
            add1: false,
            mvt: MvtOptions::default(),
            glm: GlmOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendAnalysis {
    pub design: DoseDesign,
    pub inference: JointInference,
    /// `None` when the cell-means model behind the high-dose comparison
    /// could not be fitted (Tukey-only analyses of many dose levels).
    pub downturn: Option<DownturnDecision>,
}

/// Joint Tukey-Williams max-T test: one regression per dose metameter plus
/// the requested contrasts of the cell-means model, tested as one family.
pub fn tukey_williams_joint(data: &TrendData, opts: &TrendOptions) -> Result<TrendAnalysis> {
    let (set, design, high) = marginal_set("trend", data, opts)?;
    finish(set, design, high, opts)
}

/// The marginal models behind [`tukey_williams_joint`], fitted but not yet
/// tested.
pub fn trend_family(data: &TrendData, opts: &TrendOptions) -> Result<MarginalSet> {
    Ok(marginal_set("trend", data, opts)?.0)
}

/// Williams multiple contrast test on the cell-means model.
pub fn williams_mct(data: &TrendData, opts: &TrendOptions) -> Result<TrendAnalysis> {
    let opts = TrendOptions { scalings: vec![Scaling::Treat], ctype: ContrastType::Williams, ..opts.clone() };
    tukey_williams_joint(data, &opts)
}

pub(crate) fn finish(set: MarginalSet, design: DoseDesign, high: Option<SingleTest>, opts: &TrendOptions) -> Result<TrendAnalysis> {
    let inference = max_t_test(&set, opts.alternative, opts.alpha, opts.df_rule, &opts.mvt)?;
    let inference = simultaneous_bounds(inference)?;
    let downturn = high.map(|h| downturn_guard(&inference, h, opts.alpha));
    Ok(TrendAnalysis { design, inference, downturn })
}

struct Fitted {
    coef: DVector<f64>,
    influence: DMatrix<f64>,
    df: Df,
}

impl Fitted {
    fn model(&self, label: String, l: &[f64], scale: EffectScale) -> Result<MarginalModel> {
        let estimate = l.iter().zip(self.coef.iter()).map(|(a, b)| a * b).sum();
        let influence = project_influence(&self.influence, l);
        Ok(MarginalModel::from_influence(label, estimate, influence, self.df)?.with_scale(scale))
    }
}

/// Units entering the fits, after the optional add-1 pseudo rows.
struct Units {
    dose: Vec<f64>,
    response: Vec<f64>,
    trials: Option<Vec<f64>>,
    weights: Option<Vec<f64>>,
    covariates: Vec<Vec<f64>>,
    ids: Vec<String>,
}

fn units(data: &TrendData, design: &DoseDesign, opts: &TrendOptions) -> Result<Units> {
    let n = data.len();
    let mut u = Units {
        dose: data.dose.clone(),
        response: data.response.clone(),
        trials: data.trials.clone(),
        weights: data.weights.clone(),
        covariates: data.covariates.iter().map(|(_, v)| v.clone()).collect(),
        ids: data.unit_ids.clone().unwrap_or_else(|| (1..=n).map(|i| i.to_string()).collect()),
    };
    if !opts.add1 {
        return Ok(u);
    }
    let trials = u.trials.get_or_insert_with(|| vec![1.0; n]);
    let (y, m) = add1_correction(&[0.0], &[0.0]);
    let (pseudo_y, pseudo_m) = (y[0], m[0]);
    for (g, &d) in design.doses().iter().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| data.dose[i] == d).collect();
        u.dose.push(d);
        u.response.push(pseudo_y);
        trials.push(pseudo_m);
        if let Some(w) = &mut u.weights {
            w.push(1.0);
        }
        for col in &mut u.covariates {
            let mean = members.iter().map(|&i| col[i]).sum::<f64>() / members.len() as f64;
            col.push(mean);
        }
        u.ids.push(format!("add1:{}", design.labels()[g]));
    }
    Ok(u)
}

fn fit(x: &DMatrix<f64>, names: &[String], u: &Units, opts: &TrendOptions) -> Result<Fitted> {
    match opts.model {
        ModelKind::Gaussian => {
            let fit = ols_fit(x, &DVector::from_column_slice(&u.response), names)?;
            Ok(Fitted {
                influence: fit.influence_contributions(opts.vcov)?,
                df: Df::Finite(fit.df_residual as u32),
                coef: fit.coef,
            })
        }
        ModelKind::Glm(family) => {
            let fit = irls_fit(x, &u.response, u.trials.as_deref(), u.weights.as_deref(), family, names, opts.glm)?;
            Ok(Fitted { influence: fit.influence_contributions(opts.vcov)?, df: fit.df(), coef: fit.coef.clone() })
        }
    }
}

fn effect_scale(model: ModelKind) -> EffectScale {
    match model {
        ModelKind::Glm(Family { link: Link::Logit | Link::Log, .. }) => EffectScale::Exp,
        _ => EffectScale::Identity,
    }
}

/// Fits every requested marginal model and stacks them. Also returns the
/// unadjusted highest-dose-versus-control comparison for the downturn guard,
/// unless no contrasts were requested and the cell-means model fails.
pub(crate) fn marginal_set(
    name: &str,
    data: &TrendData,
    opts: &TrendOptions,
) -> Result<(MarginalSet, DoseDesign, Option<SingleTest>)> {
    data.validate()?;
    match opts.model {
        ModelKind::Gaussian => {
            if data.trials.is_some() || data.weights.is_some() {
                return Err(TrendError::Usage("trials and weights need a binomial or poisson family".into()));
            }
            if opts.add1 {
                return Err(TrendError::Usage("the add1 correction applies to binomial models only".into()));
            }
            let first = data.response.first().copied().unwrap_or(0.0);
            if data.response.iter().all(|v| *v == first) {
                return Err(TrendError::ZeroVariance);
            }
        }
        ModelKind::Glm(family) => {
            if opts.add1 && family.kind != FamilyKind::Binomial {
                return Err(TrendError::Usage("the add1 correction applies to binomial models only".into()));
            }
        }
    }
    if opts.scalings.is_empty() {
        return Err(TrendError::Usage("at least one scaling is required".into()));
    }
    let design = DoseDesign::from_unit_doses(&data.dose)?;
    let scores = dose_metameters(&design)?;
    let u = units(data, &design, opts)?;
    let n = u.dose.len();
    let group: Vec<usize> = u.dose.iter().map(|d| design.group_of(*d).expect("dose from design")).collect();
    let cov_names: Vec<String> = data.covariates.iter().map(|(n, _)| n.clone()).collect();
    let scale = effect_scale(opts.model);
    let k = design.groups() - 1;

    let build = |lead: Vec<Vec<f64>>, lead_names: Vec<String>| -> (DMatrix<f64>, Vec<String>) {
        let cols: Vec<&Vec<f64>> = lead.iter().chain(u.covariates.iter()).collect();
        let x = DMatrix::from_fn(n, 1 + cols.len(), |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
        let mut names = vec!["(Intercept)".to_string()];
        names.extend(lead_names);
        names.extend(cov_names.iter().cloned());
        (x, names)
    };

    let mut models = Vec::new();
    let mut seen = Vec::new();
    for &s in &opts.scalings {
        if seen.contains(&s) || s == Scaling::Treat {
            seen.push(s);
            continue;
        }
        seen.push(s);
        let sc = scores.scores(s).expect("regression scaling");
        let (x, names) = build(vec![group.iter().map(|&g| sc[g]).collect()], vec![format!("dose_{s:?}").to_lowercase()]);
        let fitted = fit(&x, &names, &u, opts)?;
        let mut l = vec![0.0; x.ncols()];
        l[1] = 1.0;
        models.push(fitted.model(s.label().to_string(), &l, scale)?);
    }

    // cell-means model: intercept plus one indicator per active dose
    let indicators: Vec<Vec<f64>> = (1..=k).map(|g| group.iter().map(|&gi| (gi == g) as u8 as f64).collect()).collect();
    let names: Vec<String> = design.labels()[1..].iter().map(|l| format!("dose{l}")).collect();
    let (x, names) = build(indicators, names);
    let with_contrasts = opts.scalings.contains(&Scaling::Treat);
    let cell = match fit(&x, &names, &u, opts) {
        Ok(c) => Some(c),
        Err(e) if !with_contrasts => {
            log::warn!("no downturn check: cell-means model failed ({e})");
            None
        }
        Err(e) => return Err(e),
    };
    let mut high = None;
    if let Some(cell) = cell {
        if with_contrasts {
            let contrasts = opts.ctype.contrasts(&design)?;
            for (row, label) in contrasts.rows().iter().zip(contrasts.labels()) {
                let mut l = vec![0.0; x.ncols()];
                l[1..=k].copy_from_slice(&row[1..]);
                let prefix = match opts.ctype {
                    ContrastType::Both if row.iter().filter(|c| **c != 0.0).count() == 2 => "Dunnett",
                    ContrastType::Both => "Williams",
                    other => other.label_prefix(),
                };
                models.push(cell.model(format!("{prefix}: {label}"), &l, scale)?);
            }
        }
        let mut l = vec![0.0; x.ncols()];
        l[k] = 1.0;
        let top = cell.model(format!("{}-{}", design.labels()[k], design.labels()[0]), &l, scale);
        match top {
            Ok(top) => high = Some(SingleTest::new(top.label.clone(), top.statistic(), top.df, opts.alternative)),
            Err(e) if !with_contrasts => log::warn!("no downturn check: {e}"),
            Err(e) => return Err(e),
        }
    }

    let set = MarginalSet::new(name, models, u.ids)?;
    Ok((set, design, high))
}
