use thiserror::Error;

pub type Result<T> = std::result::Result<T, TrendError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrendError {
    #[error("design error: {0}")]
    Design(String),

    #[error("singular design: column `{column}` is linearly dependent on earlier columns")]
    SingularDesign { column: String },

    #[error("degenerate leverage: observation {index} has leverage 1")]
    DegenerateLeverage { index: usize },

    #[error("IRLS did not converge after {iterations} iterations")]
    Convergence { iterations: usize, last: Vec<f64> },

    #[error("fitted mean left the feasible region: {0}")]
    Infeasible(String),

    #[error("degenerate dispersion: {0}")]
    DegenerateDispersion(String),

    #[error("model `{label}` has an all-zero influence vector")]
    DegenerateModel { label: String },

    #[error("unit alignment mismatch: expected {expected} units, found {found}")]
    Alignment { expected: usize, found: usize },

    #[error("response has zero variance; no test statistic is defined")]
    ZeroVariance,

    #[error("mvt accuracy {error:.3e} above target {tol:.3e} (best estimate {estimate})")]
    Accuracy { estimate: f64, error: f64, tol: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("line {line}: {message}")]
    Ingest { line: usize, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for TrendError {
    fn from(err: std::io::Error) -> Self {
        TrendError::Io(err.to_string())
    }
}
