mod commands;
mod config;
mod manifest;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

pub const EXIT_ERROR: u8 = 1;
pub const EXIT_UNCONVERGED: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;

/// Maximum-entropy ensembles of time series: calibration, sampling,
/// validation and risk pipelines.
#[derive(Debug, Parser)]
#[command(name = "maxent-ts", version, about)]
struct Cli {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for all outputs and the run manifest.
    #[arg(long, global = true, env = "MAXENT_TS_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Master seed; generated and recorded when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo replicates for validate, spectrum and friends.
    #[arg(long, global = true)]
    n_rep: Option<usize>,
    /// Relative tolerance on the constraints.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// newton, gradient-ascent or fixed-point.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Token read as a missing value; repeatable.
    #[arg(long = "missing-token", global = true)]
    missing_tokens: Vec<String>,
    /// Test size for KS and backtests.
    #[arg(long, global = true)]
    significance: Option<f64>,
    /// -v info, -vv debug.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Fit a model to a data matrix.
    Calibrate(CalibrateArgs),
    /// Draw synthetic data from a model.
    Sample(SampleArgs),
    /// Moment and KS comparisons of data against a model.
    Validate(ValidateArgs),
    /// Flag cells outside their FCR-corrected intervals.
    Anomaly(AnomalyArgs),
    /// Correlation spectra: empirical, ensemble and Marchenko-Pastur.
    Spectrum(SpectrumArgs),
    /// Out-of-sample Markowitz portfolios on raw and detrended returns.
    Portfolio(PortfolioArgs),
    /// Rolling value-at-risk and backtests.
    Var(VarArgs),
    /// Brute-force partition function of a small model.
    Oracle(OracleArgs),
    /// Write a synthetic data set.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Full,
    NoMissing,
    SumsOnly,
    SumsColumnCounts,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    H1,
    H2,
    BinSums,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Multivariate constraint set; chosen from the missingness when absent.
    #[arg(long, value_enum, conflicts_with = "row")]
    pub variant: Option<VariantArg>,
    /// Fit a univariate model to this row instead.
    #[arg(long)]
    pub row: Option<usize>,
    #[arg(long, value_enum, default_value = "h1")]
    pub family: FamilyArg,
    /// Quantile levels of the bin edges.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub quantiles: Vec<f64>,
    /// Keep the outer bins at the sample extremes.
    #[arg(long)]
    pub bounded: bool,
    /// Subtract row means first.
    #[arg(long)]
    pub center: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Draws (univariate) or matrices (multivariate).
    #[arg(long, default_value_t = 1)]
    pub n: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct DataAndModel {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub center: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: DataAndModel,
    /// Row compared against a univariate model.
    #[arg(long, default_value_t = 0)]
    pub row: usize,
    /// Lower quantile of the acceptance band; the upper is its mirror.
    #[arg(long, default_value_t = 0.025)]
    pub band: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct AnomalyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: DataAndModel,
    #[arg(long, default_value_t = 0.95)]
    pub coverage: f64,
    #[arg(long, default_value_t = 0.1)]
    pub fcr_q: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectrumArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: DataAndModel,
    #[arg(long, default_value_t = 256)]
    pub points: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Raw,
    Detrended,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct PortfolioArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "20,50")]
    pub sizes: Vec<usize>,
    /// Rectangularity N/T of the in-sample window.
    #[arg(long, value_delimiter = ',', default_value = "0.667,0.25")]
    pub q: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    pub horizon: usize,
    #[arg(long, default_value_t = 2)]
    pub portfolios: usize,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
}

#[derive(Debug, Args, Serialize)]
pub struct VarArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Row of the return series; a single-column file is read as one series.
    #[arg(long, default_value_t = 0)]
    pub row: usize,
    /// M1, M2, M3 or all.
    #[arg(long, default_value = "all")]
    pub model: String,
    /// VaR confidence levels.
    #[arg(long, value_delimiter = ',', default_value = "0.95,0.90")]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 150)]
    pub window: usize,
    #[arg(long, default_value_t = 25)]
    pub l1: usize,
    /// Defaults to window - l1 + 1.
    #[arg(long)]
    pub l2: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct OracleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenerateKind {
    GaussianPanel,
    FactorMarket,
    GaussianStream,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: GenerateKind,
    #[arg(long, default_value_t = 10)]
    pub rows: usize,
    #[arg(long, default_value_t = 100)]
    pub cols: usize,
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    /// Student-t degrees of freedom of the idiosyncratic noise.
    #[arg(long, default_value_t = 3.9)]
    pub nu: f64,
    /// Fraction of cells replaced by 10-sigma outliers.
    #[arg(long, default_value_t = 0.0)]
    pub outliers: f64,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<maxent_ts::Error>() {
            return match e {
                maxent_ts::Error::InfeasibleConstraints(_) => EXIT_INFEASIBLE,
                maxent_ts::Error::Unconverged { .. } => EXIT_UNCONVERGED,
                _ => EXIT_ERROR,
            };
        }
    }
    EXIT_ERROR
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let file = match &cli.config {
        Some(p) => config::FileConfig::load(p)?,
        None => config::FileConfig::default(),
    };
    let overrides = config::Overrides {
        seed: cli.seed,
        n_rep: cli.n_rep,
        tol_rel: cli.tol,
        max_iter: cli.max_iter,
        method: cli.method,
        out_dir: cli.out_dir,
        threads: cli.threads,
        missing_tokens: (!cli.missing_tokens.is_empty()).then_some(cli.missing_tokens),
        significance: cli.significance,
    };
    let eff = config::Effective::merge(overrides, file)?;
    if let Some(n) = eff.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    if eff.seed_generated {
        log::info!("no seed given, using {}", eff.seed);
    }
    commands::dispatch(&cli.command, &eff)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn typed_errors_map_to_exit_codes() {
        let inf = anyhow::Error::from(maxent_ts::Error::InfeasibleConstraints("x".into()));
        let unc = anyhow::Error::from(maxent_ts::Error::Unconverged { iterations: 3, max_rel_err: 0.1 });
        let io = anyhow::Error::from(maxent_ts::Error::EmptyInput).context("reading");
        assert_eq!(exit_code(&inf), EXIT_INFEASIBLE);
        assert_eq!(exit_code(&unc.context("calibrating")), EXIT_UNCONVERGED);
        assert_eq!(exit_code(&io), EXIT_ERROR);
        assert_eq!(exit_code(&anyhow::anyhow!("plain")), EXIT_ERROR);
    }
}
