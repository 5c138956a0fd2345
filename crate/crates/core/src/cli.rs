//! The `trendkit` command line.

use crate::data::Dataset;
use crate::design::{ContrastType, Scaling};
use crate::error::{Result, TrendError};
use crate::glm::{DispersionMode, Family};
use crate::inference::{tukey_williams_joint, williams_mct, Alternative, DfRule, ModelKind, TrendData, TrendOptions};
use crate::linmod::VcovFlavor;
use crate::mvt::MvtOptions;
use crate::polyk::{polyk_trend, PolyKRecords};
use crate::report::{DatasetSummary, Format, Report, Settings};
use clap::builder::PossibleValuesParser;
use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand};
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_ANALYSIS: i32 = 2;

pub const SEED_ENV: &str = "TRENDKIT_SEED";
const DEFAULT_SEED: u64 = 42;

#[derive(Parser, Debug)]
#[command(
    name = "trendkit",
    version,
    about = "Dose-response trend tests with joint max-T inference",
    after_help = "\
Examples:
  trendkit run --data bun --response BUN --dose dose
  trendkit run --data bun --response BUN --scaling treat --ctype dunnett --format json
  trendkit run --data glyphosate --response tumor --trials mice --family binomial-logit --study study
  trendkit run --data animals.csv --time time --tumor tumor --polyk 3,6"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a trend analysis on a dataset
    Run(RunArgs),
    /// List the embedded datasets
    Datasets,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// CSV file, or the name of an embedded dataset
    #[arg(long, action = ArgAction::Set)]
    pub data: String,

    /// Response column (counts of successes for binomial models)
    #[arg(long, action = ArgAction::Set)]
    pub response: Option<String>,

    #[arg(long, default_value = "dose", action = ArgAction::Set)]
    pub dose: String,

    /// Number-of-trials column for binomial models
    #[arg(long, action = ArgAction::Set)]
    pub trials: Option<String>,

    /// Time-of-death column (poly-k)
    #[arg(long, action = ArgAction::Set)]
    pub time: Option<String>,

    /// Tumor indicator column, 0 or 1 (poly-k)
    #[arg(long, action = ArgAction::Set)]
    pub tumor: Option<String>,

    /// Study length; defaults to the largest observed time (poly-k)
    #[arg(long, action = ArgAction::Set)]
    pub tmax: Option<f64>,

    /// Numeric covariate columns, comma separated
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub covariate: Vec<String>,

    /// Categorical column entered as indicator covariates
    #[arg(long, action = ArgAction::Set)]
    pub study: Option<String>,

    #[arg(
        long,
        value_delimiter = ',',
        default_value = "ari,ord,arilog,treat",
        value_parser = PossibleValuesParser::new(["ari", "ord", "arilog", "treat"]),
        action = ArgAction::Set
    )]
    pub scaling: Vec<String>,

    #[arg(long, default_value = "williams", value_parser = PossibleValuesParser::new(["williams", "dunnett", "both"]), action = ArgAction::Set)]
    pub ctype: String,

    #[arg(long, default_value = "hc0", value_parser = PossibleValuesParser::new(["classic", "hc0", "hc3"]), action = ArgAction::Set)]
    pub vcov: String,

    /// Defaults to gaussian, or binomial-identity with --polyk
    #[arg(long, value_parser = PossibleValuesParser::new(["gaussian", "binomial-logit", "binomial-identity", "poisson"]), action = ArgAction::Set)]
    pub family: Option<String>,

    #[arg(long, value_parser = PossibleValuesParser::new(["fixed", "pearson"]), action = ArgAction::Set)]
    pub dispersion: Option<String>,

    /// Add one pseudo success and failure per dose group
    #[arg(long, action = ArgAction::SetTrue)]
    pub add1: bool,

    /// Poly-k exponents, comma separated; bare --polyk means 3
    #[arg(long, value_delimiter = ',', num_args = 0..=1, default_missing_value = "3", action = ArgAction::Set)]
    pub polyk: Option<Vec<f64>>,

    #[arg(long, default_value = "greater", value_parser = PossibleValuesParser::new(["greater", "less", "two-sided"]), action = ArgAction::Set)]
    pub alternative: String,

    #[arg(long, default_value_t = 0.05, action = ArgAction::Set)]
    pub alpha: f64,

    /// min-marginal, inf, or a positive integer
    #[arg(long, default_value = "min-marginal", action = ArgAction::Set)]
    pub df_rule: String,

    /// Seed for the multivariate t integration [env: TRENDKIT_SEED, default: 42]
    #[arg(long, action = ArgAction::Set)]
    pub seed: Option<u64>,

    /// Absolute error target of the multivariate t integration
    #[arg(long, default_value_t = 1e-4, action = ArgAction::Set)]
    pub mvt_tol: f64,

    #[arg(long, default_value = "text", value_parser = PossibleValuesParser::new(["text", "csv", "json"]), action = ArgAction::Set)]
    pub format: String,

    /// Write the report here instead of standard output
    #[arg(long, action = ArgAction::Set)]
    pub out: Option<PathBuf>,
}

/// A fully validated run configuration.
#[derive(Debug, Clone)]
pub struct Plan {
    pub data: String,
    pub dose: String,
    pub response: Option<String>,
    pub trials: Option<String>,
    pub covariates: Vec<String>,
    pub study: Option<String>,
    pub polyk: Option<(Vec<f64>, String, String, Option<f64>)>,
    pub options: TrendOptions,
    pub settings: Settings,
    pub format: Format,
    pub out: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> TrendError {
    TrendError::Usage(msg.into())
}

fn family_from(name: &str, dispersion: DispersionMode) -> ModelKind {
    match name {
        "gaussian" => ModelKind::Gaussian,
        "binomial-logit" => ModelKind::Glm(Family::binomial_logit().with_dispersion(dispersion)),
        "binomial-identity" => ModelKind::Glm(Family::binomial_identity().with_dispersion(dispersion)),
        _ => ModelKind::Glm(Family::poisson().with_dispersion(dispersion)),
    }
}

impl RunArgs {
    /// Checks flag combinations and resolves defaults. Fails before any
    /// data is read.
    pub fn plan(&self, env_seed: Option<&str>) -> Result<Plan> {
        let seed = match (self.seed, env_seed) {
            (Some(s), _) => s,
            (None, Some(raw)) => raw
                .trim()
                .parse()
                .map_err(|_| usage(format!("{SEED_ENV}=`{raw}` is not an unsigned integer")))?,
            (None, None) => DEFAULT_SEED,
        };
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(usage(format!("--alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.mvt_tol > 0.0 && self.mvt_tol < 1.0) {
            return Err(usage(format!("--mvt-tol must lie in (0, 1), got {}", self.mvt_tol)));
        }
        let df_rule: DfRule = self.df_rule.parse()?;
        let alternative: Alternative = self.alternative.parse()?;
        let ctype: ContrastType = self.ctype.parse()?;
        let vcov: VcovFlavor = self.vcov.parse()?;
        let mut scalings = Vec::new();
        for s in &self.scaling {
            let s: Scaling = s.parse()?;
            if scalings.contains(&s) {
                return Err(usage(format!("--scaling lists `{}` twice", self.scaling.join(","))));
            }
            scalings.push(s);
        }
        if scalings.is_empty() {
            return Err(usage("--scaling needs at least one entry"));
        }

        let polyk = match &self.polyk {
            Some(ks) => {
                if ks.is_empty() || ks.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
                    return Err(usage("--polyk exponents must be positive"));
                }
                let (Some(time), Some(tumor)) = (&self.time, &self.tumor) else {
                    return Err(usage("--polyk needs both --time and --tumor columns"));
                };
                if self.response.is_some() || self.trials.is_some() {
                    return Err(usage("--polyk reads --tumor and --time; drop --response and --trials"));
                }
                if !self.covariate.is_empty() || self.study.is_some() {
                    return Err(usage("--polyk does not take covariates"));
                }
                if matches!(self.family.as_deref(), Some(f) if f != "binomial-identity") {
                    return Err(usage("--polyk fits the binomial-identity family only"));
                }
                if let Some(t) = self.tmax {
                    if !(t > 0.0) {
                        return Err(usage("--tmax must be positive"));
                    }
                }
                Some((ks.clone(), time.clone(), tumor.clone(), self.tmax))
            }
            None => {
                if self.time.is_some() || self.tumor.is_some() || self.tmax.is_some() {
                    return Err(usage("--time, --tumor and --tmax need --polyk"));
                }
                if self.response.is_none() {
                    return Err(usage("--response is required"));
                }
                None
            }
        };

        let default_family = if polyk.is_some() { "binomial-identity" } else { "gaussian" };
        let family = self.family.clone().unwrap_or_else(|| default_family.into());
        let dispersion = match self.dispersion.as_deref() {
            Some("pearson") => DispersionMode::Pearson,
            _ => DispersionMode::Fixed,
        };
        let binomial = family.starts_with("binomial");
        if family == "gaussian" {
            if self.dispersion.is_some() {
                return Err(usage("--dispersion applies to binomial and poisson families"));
            }
            if self.trials.is_some() {
                return Err(usage("--trials needs a binomial family"));
            }
        }
        if self.add1 && !binomial {
            return Err(usage("--add1 needs a binomial family"));
        }
        if family == "poisson" && self.trials.is_some() {
            return Err(usage("--trials needs a binomial family"));
        }

        let analysis = if polyk.is_some() {
            "poly-k"
        } else if scalings == [Scaling::Treat] {
            "multiple-contrast"
        } else {
            "tukey-williams"
        };
        let options = TrendOptions {
            scalings,
            ctype,
            vcov,
            df_rule,
            alternative,
            alpha: self.alpha,
            model: family_from(&family, dispersion),
            add1: self.add1,
            mvt: MvtOptions { tol: self.mvt_tol, seed, ..MvtOptions::default() },
            ..TrendOptions::default()
        };
        let settings = Settings {
            analysis: analysis.into(),
            family,
            dispersion: self.dispersion.clone().unwrap_or_else(|| "fixed".into()),
            scalings: self.scaling.clone(),
            ctype: self.ctype.clone(),
            vcov: self.vcov.clone(),
            df_rule: df_rule.to_string(),
            alternative,
            alpha: self.alpha,
            add1: self.add1,
            polyk: polyk.as_ref().map(|p| p.0.clone()).unwrap_or_default(),
            t_max: self.tmax,
            seed,
            mvt_tol: self.mvt_tol,
        };
        Ok(Plan {
            data: self.data.clone(),
            dose: self.dose.clone(),
            response: self.response.clone(),
            trials: self.trials.clone(),
            covariates: self.covariate.clone(),
            study: self.study.clone(),
            polyk,
            options,
            settings,
            format: self.format.parse()?,
            out: self.out.clone(),
        })
    }
}

impl Plan {
    pub fn execute(&self) -> Result<Report> {
        let ds = Dataset::open(&self.data)?;
        let mut required = vec![self.dose.as_str()];
        match &self.polyk {
            Some((_, time, tumor, _)) => required.extend([time.as_str(), tumor.as_str()]),
            None => {
                required.extend(self.response.as_deref());
                required.extend(self.trials.as_deref());
                required.extend(self.covariates.iter().map(String::as_str));
                required.extend(self.study.as_deref());
            }
        }
        let sel = ds.select(&required)?;
        if sel.used.is_empty() {
            return Err(TrendError::Data(format!("{}: no complete rows", ds.source)));
        }
        let dose = ds.numeric(&self.dose, &sel.used)?;
        if let Some((i, d)) = dose.iter().enumerate().find(|(_, d)| **d < 0.0) {
            return Err(TrendError::Ingest { line: ds.line(sel.used[i]), message: format!("negative dose {d}") });
        }

        let analysis = match &self.polyk {
            Some((ks, time, tumor, t_max)) => {
                let rec = PolyKRecords::new(
                    dose,
                    ds.numeric(time, &sel.used)?,
                    ds.numeric(tumor, &sel.used)?,
                    *t_max,
                )?;
                polyk_trend(&rec, ks, &self.options)?
            }
            None => {
                let response = ds.numeric(self.response.as_deref().expect("validated"), &sel.used)?;
                let n = response.len();
                let mut data = TrendData::new(dose, response);
                if let ModelKind::Glm(f) = self.options.model {
                    if f.kind == crate::glm::FamilyKind::Binomial {
                        data = data.with_trials(match &self.trials {
                            Some(col) => ds.numeric(col, &sel.used)?,
                            None => vec![1.0; n],
                        });
                    }
                }
                for c in &self.covariates {
                    data = data.with_covariate(c.clone(), ds.numeric(c, &sel.used)?);
                }
                if let Some(study) = &self.study {
                    for (name, col) in crate::data::indicator_columns(study, &ds.text(study, &sel.used)?) {
                        data = data.with_covariate(name, col);
                    }
                }
                if self.options.scalings == [Scaling::Treat] {
                    williams_mct(&data, &self.options)?
                } else {
                    tukey_williams_joint(&data, &self.options)?
                }
            }
        };
        let summary = DatasetSummary {
            source: ds.source.clone(),
            sha256: ds.sha256.clone(),
            rows_in: ds.rows(),
            rows_used: sel.used.len(),
            rejected: sel.rejected,
        };
        Ok(Report::new(summary, self.settings.clone(), &analysis.inference, analysis.downturn.as_ref()))
    }
}

/// Runs the command line `args` (program name first) and returns the exit
/// code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK { write!(stdout, "{rendered}") } else { write!(stderr, "{rendered}") };
            return code;
        }
    };
    match cli.command {
        Command::Datasets => {
            for name in crate::data::EMBEDDED {
                let _ = writeln!(stdout, "{name}");
            }
            EXIT_OK
        }
        Command::Run(args) => {
            let env_seed = std::env::var(SEED_ENV).ok();
            let plan = match args.plan(env_seed.as_deref()) {
                Ok(p) => p,
                Err(e) => {
                    let _ = writeln!(stderr, "trendkit: {e}");
                    return EXIT_USAGE;
                }
            };
            match emit(&plan, stdout) {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    let _ = writeln!(stderr, "trendkit: {e}");
                    EXIT_ANALYSIS
                }
            }
        }
    }
}

fn emit(plan: &Plan, stdout: &mut dyn Write) -> Result<()> {
    let report = plan.execute()?;
    let rendered = report.render(plan.format)?;
    match &plan.out {
        Some(path) => std::fs::write(path, rendered)?,
        None => stdout.write_all(rendered.as_bytes())?,
    }
    Ok(())
}
