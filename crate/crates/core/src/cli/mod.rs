//! Command-line interface.
//!
//! Exit codes: 0 success, 1 failed oracle check, 2 I/O, 3 validation or usage,
//! 4 numerical failure.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, ErrorClass};

pub use commands::parse_learner;

#[derive(Debug, Parser)]
#[command(name = "blipvar", version, about = "TMLE / CV-TMLE for the ATE and the variance of the treatment effect")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Master seed (falls back to BLIPVAR_SEED, then 0)
    #[arg(long, global = true, env = "BLIPVAR_SEED")]
    pub seed: Option<u64>,
    /// Significance level [default: 0.05]
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Cross-fitting folds [default: 10]
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    /// Output file (for `simulate`, a directory)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Tmle,
    CvTmle,
    LrPlugin,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate ATE and VTE on a CSV file
    Estimate(EstimateArgs),
    /// Run a simulation campaign from a JSON config
    Simulate(SimulateArgs),
    /// Simultaneous (1 - alpha) quantile of max |Z_j| for Z ~ N(0, corr)
    Quantile(QuantileArgs),
    /// Check the efficient influence curve against numerical pathwise derivatives
    CheckEic(CheckEicArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Input CSV with a header row
    pub csv: PathBuf,
    #[arg(long, default_value = "y")]
    pub y: String,
    #[arg(long, default_value = "a")]
    pub a: String,
    /// Comma-separated covariate columns [default: every other column]
    #[arg(long, value_delimiter = ',')]
    pub w: Vec<String>,
    #[arg(long, value_enum, default_value_t = EstimatorArg::CvTmle)]
    pub estimator: EstimatorArg,
    /// Known P(A=1|W): a constant in (0,1) or a built-in design name (case1, case2, ...)
    #[arg(long)]
    pub known_g: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    pub g_trunc: f64,
    /// Also report sqrt(VTE)
    #[arg(long)]
    pub sqrt_vte: bool,
    /// Outcome bounds `lo,hi` used to map Y into [0,1]
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub bounds: Option<Vec<f64>>,
    /// Monte-Carlo draws for the simultaneous quantile (0 skips it)
    #[arg(long, default_value_t = crate::inference::DEFAULT_QUANTILE_DRAWS)]
    pub draws: usize,
    /// Outcome learners, e.g. `logistic-main,knn:25,logistic-l2:0.1`
    #[arg(long, value_delimiter = ',', default_value = "logistic-main,logistic-main-interactions,polynomial-logistic:2")]
    pub q_library: Vec<String>,
    /// Propensity learners (ignored with --known-g)
    #[arg(long, value_delimiter = ',', default_value = "logistic-main,logistic-main-interactions")]
    pub g_library: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Campaign config (JSON)
    pub config: PathBuf,
    /// Worker threads, overriding the config (0 = all cores)
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("matrix").required(true).args(["rho", "corr_file"])))]
pub struct QuantileArgs {
    /// Correlation of a bivariate normal
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    /// Correlation matrix as headerless CSV
    #[arg(long)]
    pub corr_file: Option<PathBuf>,
    #[arg(long, default_value_t = crate::inference::DEFAULT_QUANTILE_DRAWS)]
    pub draws: usize,
}

#[derive(Debug, Args)]
pub struct CheckEicArgs {
    /// Number of random (distribution, score) cases
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub cases: u64,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Pass/fail tolerance on |numeric - inner product|
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, hide = true)]
    pub inject_d2_sign_flip: bool,
}

pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Io => 2,
        ErrorClass::Validation => 3,
        ErrorClass::Numeric => 4,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    match commands::dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
