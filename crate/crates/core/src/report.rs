//! Analysis reports and their text, CSV and JSON renderings.

use crate::data::Rejection;
use crate::error::Result;
use crate::inference::{Alternative, DownturnDecision, JointInference, SingleTest};
use crate::mmm::EffectScale;
use crate::special::Df;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::str::FromStr;

/// Significant digits kept for every number in a report.
pub const SIG_DIGITS: usize = 10;

/// Rounds to [`SIG_DIGITS`] significant digits; non-finite values become `None`.
pub fn sig(x: f64) -> Option<f64> {
    if !x.is_finite() {
        return None;
    }
    let s = format!("{:.*e}", SIG_DIGITS - 1, x);
    Some(f64::from_str(&s).expect("formatted float parses"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub source: String,
    pub sha256: String,
    pub rows_in: usize,
    pub rows_used: usize,
    pub rejected: Vec<Rejection>,
}

/// The options an analysis ran with, as given on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub analysis: String,
    pub family: String,
    pub dispersion: String,
    pub scalings: Vec<String>,
    pub ctype: String,
    pub vcov: String,
    pub df_rule: String,
    pub alternative: Alternative,
    pub alpha: f64,
    pub add1: bool,
    pub polyk: Vec<f64>,
    pub t_max: Option<f64>,
    pub seed: u64,
    pub mvt_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub scale: EffectScale,
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    pub statistic: Option<f64>,
    pub raw_p: Option<f64>,
    pub adjusted_p: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub trend_p: Option<f64>,
    pub trend_significant: bool,
    pub high_vs_control: String,
    pub high_statistic: Option<f64>,
    pub high_p: Option<f64>,
    pub high_significant: bool,
    pub monotone_trend: bool,
    pub downturn_flagged: bool,
}

impl From<&DownturnDecision> for Decision {
    fn from(d: &DownturnDecision) -> Self {
        let SingleTest { label, statistic, p_value } = &d.high_vs_control;
        Self {
            trend_p: sig(d.trend_p),
            trend_significant: d.trend_significant,
            high_vs_control: label.clone(),
            high_statistic: sig(*statistic),
            high_p: sig(*p_value),
            high_significant: d.high_significant,
            monotone_trend: d.monotone_trend,
            downturn_flagged: d.downturn_flagged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub dataset: DatasetSummary,
    pub settings: Settings,
    /// `None` for the normal limit.
    pub df: Option<f64>,
    pub critical_value: Option<f64>,
    pub rows: Vec<ReportRow>,
    pub decision: Option<Decision>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Text,
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = crate::TrendError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(crate::TrendError::Usage(format!("unknown format `{other}`"))),
        }
    }
}

pub const CSV_HEADER: [&str; 9] =
    ["label", "scale", "estimate", "std_error", "statistic", "raw_p", "adjusted_p", "lower", "upper"];

impl Report {
    pub fn new(
        dataset: DatasetSummary,
        settings: Settings,
        inference: &JointInference,
        decision: Option<&DownturnDecision>,
    ) -> Self {
        let rows = (0..inference.len())
            .map(|j| ReportRow {
                label: inference.labels[j].clone(),
                scale: inference.scales[j],
                estimate: sig(inference.reported_estimate(j)),
                std_error: sig(inference.std_errors[j]),
                statistic: sig(inference.t_stats[j]),
                raw_p: sig(inference.raw_p[j]),
                adjusted_p: sig(inference.adjusted_p[j]),
                lower: inference.reported_lower(j).and_then(sig),
                upper: inference.reported_upper(j).and_then(sig),
            })
            .collect();
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            dataset,
            settings,
            df: match inference.df {
                Df::Finite(d) => Some(d as f64),
                Df::Infinite => None,
            },
            critical_value: inference.critical_value.and_then(sig),
            rows,
            decision: decision.map(Decision::from),
        }
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Text => Ok(self.to_text()),
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| crate::TrendError::Io(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| crate::TrendError::Data(format!("invalid report: {e}")))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| crate::TrendError::Io(e.to_string());
        w.write_record(CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            let scale = match r.scale {
                EffectScale::Identity => "identity",
                EffectScale::Exp => "exp",
            };
            let nums = [r.estimate, r.std_error, r.statistic, r.raw_p, r.adjusted_p, r.lower, r.upper]
                .map(|v| v.map(json_number).unwrap_or_default());
            let mut record = vec![r.label.clone(), scale.to_string()];
            record.extend(nums);
            w.write_record(&record).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::TrendError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_text(&self) -> String {
        let s = &self.settings;
        let d = &self.dataset;
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.tool, self.version);
        let _ = writeln!(out, "data: {} (sha256 {})", d.source, d.sha256);
        let _ = writeln!(out, "rows: {} read, {} used, {} rejected", d.rows_in, d.rows_used, d.rejected.len());
        for r in &d.rejected {
            let _ = writeln!(out, "  line {}: {}", r.line, r.reason);
        }
        let _ = writeln!(
            out,
            "analysis: {}, family {} ({} dispersion), covariance {}, contrasts {}",
            s.analysis, s.family, s.dispersion, s.vcov, s.ctype
        );
        if !s.polyk.is_empty() {
            let ks: Vec<String> = s.polyk.iter().map(|k| k.to_string()).collect();
            let _ = writeln!(out, "poly-k: {}", ks.join(", "));
        }
        let df = self.df.map(|d| d.to_string()).unwrap_or_else(|| "Inf".into());
        let crit = self.critical_value.map(|c| format!("{c:.3}")).unwrap_or_else(|| "NA".into());
        let _ = writeln!(
            out,
            "alternative: {}, alpha {}, df {} ({}), critical value {}",
            s.alternative, s.alpha, df, s.df_rule, crit
        );
        let _ = writeln!(out, "mvt: tol {:e}, seed {}", s.mvt_tol, s.seed);
        out.push('\n');

        let (show_lower, show_upper) = match s.alternative {
            Alternative::Greater => (true, false),
            Alternative::Less => (false, true),
            Alternative::TwoSided => (true, true),
        };
        let width = self.rows.iter().map(|r| r.label.chars().count()).max().unwrap_or(0).max("Model".len());
        let mut header = format!("{:<width$}  {:>10}  {:>15}  {:>8}", "Model", "Estimate", "Test statistics", "p-value");
        if show_lower {
            header.push_str(&format!("  {:>11}", "Lower bound"));
        }
        if show_upper {
            header.push_str(&format!("  {:>11}", "Upper bound"));
        }
        let _ = writeln!(out, "{}", header.trim_end());
        for r in &self.rows {
            let mut line = format!(
                "{:<width$}  {:>10}  {:>15}  {:>8}",
                r.label,
                fixed(r.estimate, 3),
                fixed(r.statistic, 3),
                pvalue(r.adjusted_p)
            );
            if show_lower {
                line.push_str(&format!("  {:>11}", fixed(r.lower, 3)));
            }
            if show_upper {
                line.push_str(&format!("  {:>11}", fixed(r.upper, 3)));
            }
            let _ = writeln!(out, "{}", line.trim_end());
        }
        if let Some(dec) = &self.decision {
            let yes = |b: bool| if b { "yes" } else { "no" };
            out.push('\n');
            let _ = writeln!(out, "trend: min adjusted p {} (significant: {})", pvalue(dec.trend_p), yes(dec.trend_significant));
            let _ = writeln!(
                out,
                "{}: statistic {}, p {} (significant: {})",
                dec.high_vs_control,
                fixed(dec.high_statistic, 3),
                pvalue(dec.high_p),
                yes(dec.high_significant)
            );
            let _ = writeln!(out, "monotone trend: {}, downturn flagged: {}", yes(dec.monotone_trend), yes(dec.downturn_flagged));
        }
        out
    }
}

/// Same digits as the JSON rendering.
fn json_number(x: f64) -> String {
    serde_json::to_string(&x).expect("finite number")
}

fn fixed(x: Option<f64>, digits: usize) -> String {
    match x {
        Some(v) => format!("{v:.digits$}"),
        None => "NA".into(),
    }
}

fn pvalue(p: Option<f64>) -> String {
    match p {
        Some(v) if v < 5e-5 => "<0.0001".into(),
        Some(v) => format!("{v:.4}"),
        None => "NA".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{tukey_williams_joint, TrendData, TrendOptions};

    fn settings() -> Settings {
        Settings {
            analysis: "tukey-williams".into(),
            family: "gaussian".into(),
            dispersion: "fixed".into(),
            scalings: vec!["ari".into(), "treat".into()],
            ctype: "williams".into(),
            vcov: "hc0".into(),
            df_rule: "min-marginal".into(),
            alternative: Alternative::Greater,
            alpha: 0.05,
            add1: false,
            polyk: vec![],
            t_max: None,
            seed: 42,
            mvt_tol: 1e-4,
        }
    }

    fn summary(rows: usize) -> DatasetSummary {
        DatasetSummary { source: "toy".into(), sha256: "00".into(), rows_in: rows, rows_used: rows, rejected: vec![] }
    }

    fn toy_report() -> Report {
        let data = TrendData::new(
            vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 3.0, 3.0, 3.0],
            vec![1.0, 1.3, 0.8, 1.9, 1.4, 2.2, 2.9, 3.3, 2.6],
        );
        let opts = TrendOptions { scalings: vec![crate::design::Scaling::Ari, crate::design::Scaling::Treat], ..TrendOptions::default() };
        let a = tukey_williams_joint(&data, &opts).unwrap();
        Report::new(summary(9), settings(), &a.inference, a.downturn.as_ref())
    }

    #[test]
    fn sig_rounds_to_ten_digits() {
        assert_eq!(sig(0.123456789012345), Some(0.1234567890));
        assert_eq!(sig(-98765.432109876), Some(-98765.43211));
        assert_eq!(sig(f64::INFINITY), None);
        assert_eq!(sig(f64::NAN), None);
    }

    #[test]
    fn renderings_are_stable() {
        let a = toy_report();
        let b = toy_report();
        for f in [Format::Text, Format::Csv, Format::Json] {
            assert_eq!(a.render(f).unwrap(), b.render(f).unwrap());
        }
        let text = a.to_text();
        assert!(text.contains("Tukey: arithmetic"));
        assert!(text.contains("Williams: 3-0"));
        assert!(text.contains("seed 42"));
    }

    #[test]
    fn json_round_trips_and_agrees_with_csv() {
        let r = toy_report();
        let json = r.to_json().unwrap();
        let back = Report::from_json(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json().unwrap(), json);

        let csv = r.to_csv().unwrap();
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        let records: Vec<csv::StringRecord> = reader.records().map(|x| x.unwrap()).collect();
        assert_eq!(records.len(), r.rows.len());
        for (rec, row) in records.iter().zip(&back.rows) {
            assert_eq!(&rec[0], row.label);
            let cols = [row.estimate, row.std_error, row.statistic, row.raw_p, row.adjusted_p, row.lower, row.upper];
            for (k, v) in cols.iter().enumerate() {
                let cell = &rec[k + 2];
                match v {
                    Some(x) => {
                        let parsed: f64 = cell.parse().unwrap();
                        assert!((parsed - x).abs() <= 1e-9 * x.abs().max(1e-300));
                    }
                    None => assert!(cell.is_empty()),
                }
            }
        }
    }

    #[test]
    fn empty_report_has_headers_only() {
        let empty = JointInference {
            labels: vec![],
            estimates: vec![],
            std_errors: vec![],
            t_stats: vec![],
            raw_p: vec![],
            adjusted_p: vec![],
            scales: vec![],
            df: Df::Infinite,
            correlation: vec![],
            alternative: Alternative::Greater,
            alpha: 0.05,
            critical_value: None,
            lower: vec![],
            upper: vec![],
            mvt: Default::default(),
        };
        let r = Report::new(summary(0), settings(), &empty, None);
        assert_eq!(r.to_csv().unwrap(), format!("{}\n", CSV_HEADER.join(",")));
        let text = r.to_text();
        assert!(text.trim_end().ends_with("Lower bound"));
        assert!(r.to_json().unwrap().contains("\"rows\": []"));
    }
}
