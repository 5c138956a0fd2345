//! Joint max-T inference over a family of marginal models: adjusted
//! p-values, simultaneous bounds and the downturn guard.

pub(crate) mod pipeline;

pub use pipeline::{
    trend_family, tukey_williams_joint, williams_mct, ModelKind, TrendAnalysis, TrendData, TrendOptions,
};

use crate::error::{Result, TrendError};
use crate::mmm::{joint_correlation, EffectScale, MarginalSet};
use crate::mvt::{equicoordinate_quantile, mvt_cdf, MvtOptions, MvtProblem};
use crate::par::map_indexed;
use crate::special::{t_cdf, t_sf, Df};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    Greater,
    Less,
    TwoSided,
}

impl Alternative {
    fn raw_p(self, t: f64, df: Df) -> f64 {
        match self {
            Alternative::Greater => t_sf(t, df),
            Alternative::Less => t_cdf(t, df),
            Alternative::TwoSided => (2.0 * t_sf(t.abs(), df)).min(1.0),
        }
    }
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alternative::Greater => "greater",
            Alternative::Less => "less",
            Alternative::TwoSided => "two-sided",
        })
    }
}

impl FromStr for Alternative {
    type Err = TrendError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            "two-sided" | "two_sided" | "two.sided" => Ok(Alternative::TwoSided),
            other => Err(TrendError::Usage(format!("unknown alternative `{other}`"))),
        }
    }
}

/// Degrees of freedom of the joint reference distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DfRule {
    /// Smallest residual df among the marginal models.
    #[default]
    MinMarginal,
    Fixed(u32),
    Infinite,
}

impl DfRule {
    pub fn resolve(self, set: &MarginalSet) -> Df {
        match self {
            DfRule::MinMarginal => set.models.iter().map(|m| m.df).min().unwrap_or(Df::Infinite),
            DfRule::Fixed(d) => Df::Finite(d),
            DfRule::Infinite => Df::Infinite,
        }
    }
}

impl fmt::Display for DfRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DfRule::MinMarginal => f.write_str("min-marginal"),
            DfRule::Fixed(d) => write!(f, "{d}"),
            DfRule::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for DfRule {
    type Err = TrendError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min-marginal" | "min_marginal" | "min" => Ok(DfRule::MinMarginal),
            "inf" | "infinite" => Ok(DfRule::Infinite),
            other => match other.parse::<u32>() {
                Ok(d) if d > 0 => Ok(DfRule::Fixed(d)),
                _ => Err(TrendError::Usage(format!(
                    "df rule must be `min-marginal`, `inf` or a positive integer, got `{other}`"
                ))),
            },
        }
    }
}

/// Stacked results of a max-T test. Estimates and bounds are on the model
/// scale; `reported_*` apply the effect scale of each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointInference {
    pub labels: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub raw_p: Vec<f64>,
    pub adjusted_p: Vec<f64>,
    pub scales: Vec<EffectScale>,
    pub df: Df,
    pub correlation: Vec<Vec<f64>>,
    pub alternative: Alternative,
    pub alpha: f64,
    /// Equicoordinate critical value, once bounds are computed.
    pub critical_value: Option<f64>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    pub mvt: MvtOptions,
}

impl JointInference {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        let q = self.len();
        DMatrix::from_fn(q, q, |a, b| self.correlation[a][b])
    }

    pub fn reported_estimate(&self, j: usize) -> f64 {
        apply(self.scales[j], self.estimates[j])
    }

    pub fn reported_lower(&self, j: usize) -> Option<f64> {
        self.lower[j].map(|v| apply(self.scales[j], v))
    }

    pub fn reported_upper(&self, j: usize) -> Option<f64> {
        self.upper[j].map(|v| apply(self.scales[j], v))
    }

    /// Smallest adjusted p-value: the p-value of the max-T test itself.
    pub fn min_adjusted_p(&self) -> f64 {
        self.adjusted_p.iter().copied().fold(1.0, f64::min)
    }
}

fn apply(scale: EffectScale, v: f64) -> f64 {
    match scale {
        EffectScale::Identity => v,
        EffectScale::Exp => v.exp(),
    }
}

/// Single-step max-T test. The adjusted p-value of row `j` is the
/// probability that some statistic of the family is at least as extreme as
/// `t_j` under the joint null; it is kept between the raw and Bonferroni
/// p-values, which bounds the integration error.
pub fn max_t_test(
    set: &MarginalSet,
    alternative: Alternative,
    alpha: f64,
    df_rule: DfRule,
    opts: &MvtOptions,
) -> Result<JointInference> {
    if set.is_empty() {
        return Err(TrendError::Design("empty model family".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(TrendError::Usage(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let q = set.len();
    let df = df_rule.resolve(set);
    let corr = if q == 1 { DMatrix::identity(1, 1) } else { joint_correlation(set)? };
    let estimates: Vec<f64> = set.models.iter().map(|m| m.estimate).collect();
    let std_errors: Vec<f64> = set.models.iter().map(|m| m.std_error()).collect();
    let t_stats: Vec<f64> = set.models.iter().map(|m| m.statistic()).collect();
    let raw_p: Vec<f64> = t_stats.iter().map(|t| alternative.raw_p(*t, df)).collect();

    // rows sharing a statistic (to rounding) share the joint probability
    let mut distinct: Vec<usize> = Vec::new();
    let mut source = vec![0usize; q];
    for j in 0..q {
        match distinct.iter().position(|&d| (t_stats[d] - t_stats[j]).abs() <= 1e-12 * t_stats[j].abs().max(1.0)) {
            Some(pos) => source[j] = pos,
            None => {
                source[j] = distinct.len();
                distinct.push(j);
            }
        }
    }
    let tail: Vec<Result<f64>> = map_indexed(distinct.len(), opts.execution, |d| {
        let t = t_stats[distinct[d]];
        let (lower, upper) = match alternative {
            Alternative::Greater => (vec![f64::NEG_INFINITY; q], vec![t; q]),
            // P(min T >= t) = P(all -T <= -t), and negation keeps R
            Alternative::Less => (vec![f64::NEG_INFINITY; q], vec![-t; q]),
            Alternative::TwoSided => (vec![-t.abs(); q], vec![t.abs(); q]),
        };
        let problem = MvtProblem::new(lower, upper, corr.clone(), df)?;
        Ok(1.0 - mvt_cdf(&problem, opts)?.probability)
    });
    let tail = tail.into_iter().collect::<Result<Vec<f64>>>()?;
    let adjusted_p = (0..q)
        .map(|j| {
            if q == 1 {
                return raw_p[0];
            }
            let bonferroni = (q as f64 * raw_p[j]).min(1.0);
            tail[source[j]].clamp(raw_p[j], bonferroni)
        })
        .collect();

    Ok(JointInference {
        labels: set.models.iter().map(|m| m.label.clone()).collect(),
        estimates,
        std_errors,
        t_stats,
        raw_p,
        adjusted_p,
        scales: set.models.iter().map(|m| m.scale).collect(),
        df,
        correlation: (0..q).map(|a| (0..q).map(|b| corr[(a, b)]).collect()).collect(),
        alternative,
        alpha,
        critical_value: None,
        lower: vec![None; q],
        upper: vec![None; q],
        mvt: *opts,
    })
}

/// Adds simultaneous `1 - alpha` bounds `estimate -/+ c * se`, with `c` the
/// equicoordinate quantile of the joint distribution.
pub fn simultaneous_bounds(mut inf: JointInference) -> Result<JointInference> {
    let two_sided = inf.alternative == Alternative::TwoSided;
    let c = equicoordinate_quantile(inf.alpha, &inf.correlation_matrix(), inf.df, two_sided, &inf.mvt)?;
    for j in 0..inf.len() {
        let (est, half) = (inf.estimates[j], c * inf.std_errors[j]);
        match inf.alternative {
            Alternative::Greater => inf.lower[j] = Some(est - half),
            Alternative::Less => inf.upper[j] = Some(est + half),
            Alternative::TwoSided => {
                inf.lower[j] = Some(est - half);
                inf.upper[j] = Some(est + half);
            }
        }
    }
    inf.critical_value = Some(c);
    Ok(inf)
}

/// A single unadjusted comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleTest {
    pub label: String,
    pub statistic: f64,
    pub p_value: f64,
}

impl SingleTest {
    pub fn new(label: impl Into<String>, statistic: f64, df: Df, alternative: Alternative) -> Self {
        Self { label: label.into(), statistic, p_value: alternative.raw_p(statistic, df) }
    }
}

/// Intersection-union decision: a monotone trend is claimed only when the
/// joint trend test and the high-dose-versus-control comparison both reject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownturnDecision {
    pub trend_p: f64,
    pub trend_significant: bool,
    pub high_vs_control: SingleTest,
    pub high_significant: bool,
    pub monotone_trend: bool,
    /// Trend detected but the highest dose does not differ from control.
    pub downturn_flagged: bool,
}

pub fn downturn_guard(trend: &JointInference, high_vs_control: SingleTest, alpha: f64) -> DownturnDecision {
    let trend_p = trend.min_adjusted_p();
    let trend_significant = trend_p < alpha;
    let high_significant = high_vs_control.p_value < alpha;
    DownturnDecision {
        trend_p,
        trend_significant,
        high_significant,
        monotone_trend: trend_significant && high_significant,
        downturn_flagged: trend_significant && !high_significant,
        high_vs_control,
    }
}
