use thiserror::Error;

/// Errors produced by ingestion, model evaluation, calibration and the
/// downstream pipelines.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("parse error at row {row}{}: {message}", .col.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        row: usize,
        col: Option<usize>,
        message: String,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("row {0} has no observed values")]
    DegenerateRow(usize),

    #[error("invalid quantile grid: {0}")]
    InvalidGrid(String),

    #[error("degenerate quantiles: all finite quantiles equal {value}")]
    DegenerateQuantiles { value: f64, q: Vec<f64> },

    #[error("value {value} at position {index} lies outside the grid support [{lo}, {hi}]")]
    OutOfSupport {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("divergent partition function: {0}")]
    DivergentPartition(String),

    #[error("cell ({row}, {col}) lies outside the physical region: {message}")]
    OutOfPhysicalRegion {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("model is not calibrated")]
    NotCalibrated,

    #[error("densities have mismatched support: {0}")]
    SupportError(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("infeasible constraints: {0}")]
    InfeasibleConstraints(String),

    #[error("calibration did not converge after {iterations} iterations (max relative residual {max_rel_err:.3e})")]
    Unconverged { iterations: usize, max_rel_err: f64 },

    #[error("oracle problem too large: {0}")]
    OracleTooLarge(String),

    #[error("insufficient sample: {0}")]
    InsufficientSample(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular correlation matrix: {0}")]
    SingularCorrelation(String),

    #[error("degenerate efficient frontier (ac - b^2 = {0:.3e})")]
    DegenerateFrontier(f64),

    #[error("degenerate window: {0}")]
    DegenerateWindow(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
