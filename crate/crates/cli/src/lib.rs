//! Command-line front end for group-wise fitting, aggregation, simulation
//! and the maximin oracle.
//!
//! Exit codes: 0 success, 1 certificate bound violated, 2 invalid input or
//! configuration, 3 estimator failure, 4 solver failure.

pub mod args;
pub mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::args::GroupArg;

pub const EXIT_BOUND_VIOLATED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ESTIMATOR: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(e: impl std::fmt::Display) -> Self {
        CliError { code: EXIT_INPUT, message: e.to_string() }
    }

    /// Failures while fitting: numerical solver trouble maps to 4, anything
    /// else to 3.
    pub fn estimation(e: magging::Error) -> Self {
        let code = if e.is_solver_failure() { EXIT_SOLVER } else { EXIT_ESTIMATOR };
        CliError { code, message: e.to_string() }
    }

    pub fn solver(e: magging::Error) -> Self {
        CliError { code: EXIT_SOLVER, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "magging", version, about = "Maximin aggregation of group-wise regression estimates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one estimator per group and aggregate the ensemble.
    Fit(FitArgs),
    /// Write a simulated dataset and its ground-truth metadata.
    Simulate(SimulateArgs),
    /// Maximin point of a support set.
    Oracle(OracleArgs),
    /// Check the Magging error bound on a simulated dataset.
    Certify(CertifyArgs),
    /// Emit plot data for a figure.
    Figure(FigureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset CSV with columns y, x1..xp and optionally group.
    #[arg(long)]
    pub input: PathBuf,
    /// known | blocks:G | subsample:G,m
    #[arg(long, default_value = "known")]
    pub groups: GroupArg,
    /// ols | ridge:λ | lasso | lasso:λ
    #[arg(long, default_value = "lasso", value_parser = args::parse_estimator)]
    pub estimator: magging::estimators::EstimatorKind,
    #[arg(long)]
    pub intercept: bool,
    #[arg(long)]
    pub standardize: bool,
    /// mean | magging | pooled | stack:convex | stack:sign | stack:ridge:s
    /// (stacking takes an optional :loo or :oob suffix). Repeatable.
    #[arg(long = "scheme", value_delimiter = ',', default_value = "magging", value_parser = args::parse_scheme)]
    pub schemes: Vec<magging::aggregate::Scheme>,
    /// Seed for random subsampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Duality-gap tolerance of the weight solvers.
    #[arg(long, default_value_t = magging::simplex_qp::DEFAULT_TOL)]
    pub tol: f64,
    /// Simulation metadata; adds the distance to the common signal when it
    /// is recorded.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Clusterwise,
    SmoothDrift,
    OutlierContamination,
    Periodic,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioArg,
    /// Output prefix; writes <prefix>.csv and <prefix>.meta.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Number of groups.
    #[arg(long = "groups")]
    pub num_groups: Option<usize>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub coefficient_scale: Option<f64>,
    #[arg(long)]
    pub contamination: Option<f64>,
    #[arg(long)]
    pub outlier_scale: Option<f64>,
    /// Subsample size for the contamination scenario.
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Clusterwise: reuse one design block in every group.
    #[arg(long)]
    pub shared_design: bool,
    /// Periodic: recording length.
    #[arg(long)]
    pub n_per_group: Option<usize>,
    #[arg(long)]
    pub dict_size: Option<usize>,
    #[arg(long)]
    pub common_components: Option<usize>,
    #[arg(long)]
    pub per_group_components: Option<usize>,
    #[arg(long)]
    pub common_amplitude: Option<f64>,
    #[arg(long)]
    pub group_amplitude: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Support points, one per CSV row.
    #[arg(long)]
    pub support: PathBuf,
    /// Covariance matrix CSV; identity when absent.
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    /// Cross-check against a brute-force grid (p ≤ 3).
    #[arg(long)]
    pub grid_check: bool,
    #[arg(long, default_value_t = 0.01)]
    pub grid_step: f64,
    #[arg(long)]
    pub grid_radius: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    /// Simulated dataset CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Metadata JSON; defaults to <input stem>.meta.json.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long, default_value = "ols", value_parser = args::parse_estimator)]
    pub estimator: magging::estimators::EstimatorKind,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FigureArgs {
    /// fig3 | robustness
    pub experiment: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

/// Sizes the global thread pool from `MAGGING_THREADS` (0 or unset: one
/// thread per core).
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("MAGGING_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::input(format!("MAGGING_THREADS must be a non-negative integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(CliError::input)
}

pub fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Oracle(a) => commands::oracle(&a),
        Command::Certify(a) => commands::certify(&a),
        Command::Figure(a) => commands::figure(&a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use magging::Error;

    #[test]
    fn exit_codes_follow_the_failure_stage() {
        let stall = || Error::NoConvergence { iterations: 10, gap: 1.0, tol: 1e-9 };
        assert_eq!(CliError::estimation(Error::Singular { condition: 1e13, limit: 1e12 }).code, EXIT_ESTIMATOR);
        assert_eq!(CliError::estimation(Error::Group { group: 2, source: Box::new(stall()) }).code, EXIT_SOLVER);
        assert_eq!(CliError::solver(stall()).code, EXIT_SOLVER);
        assert_eq!(CliError::input(Error::Csv { line: 4, message: "x".into() }).code, EXIT_INPUT);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
