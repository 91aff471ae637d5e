//! `sitebal`: balancing weights, transported site effects, cross-site
//! heterogeneity and the simulation harness from the command line.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "sitebal",
    version,
    about = "Transport multisite trial effects with approximate balancing weights"
)]
pub struct Cli {
    /// TOML run manifest; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream (bootstrap, simulation).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-site and bootstrap parallelism.
    #[arg(long, global = true, env = "SITEBAL_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve balancing weights for one site or all sites.
    Weights(WeightsArgs),
    /// Estimate every site's effect on the target, untransported and transported.
    Transport(TransportArgs),
    /// Between-site heterogeneity of an effects table.
    Heterogeneity(HeterogeneityArgs),
    /// Run the simulation harness.
    Simulate(SimulateArgs),
    /// Imbalance and effective sample size along a λ grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Linear,
    Kernel,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Unit-level trial data: site_id, z, y and covariate columns.
    #[arg(long)]
    pub data: PathBuf,
    /// Unit-level target covariates. Defaults to the pooled trial sample.
    #[arg(long, conflicts_with = "moments")]
    pub target: Option<PathBuf>,
    /// Target feature means: a header of feature names and one row of values.
    #[arg(long)]
    pub moments: Option<PathBuf>,
    /// Balancing geometry. Kernel mode uses the manifest's kernels, or RBF
    /// kernels with median-heuristic bandwidths.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Only this site.
    #[arg(long)]
    pub site: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Weights file: site_id, row, gamma.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-site diagnostics; stdout when omitted.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Per-feature imbalance before and after weighting.
    #[arg(long)]
    pub imbalance: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransportArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Estimates table; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Weights behind the weighting estimates.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HeterogeneityArgs {
    /// Effects table with site_id, estimate and std_error columns.
    #[arg(long)]
    pub effects: PathBuf,
    /// Rows to use when the table has a method column.
    #[arg(long, default_value = "weighting")]
    pub method: String,
    /// Untransported effects table, for the pseudo-R² comparison.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, default_value = "naive")]
    pub baseline_method: String,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Report table; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub reps: Option<usize>,
    /// Results table; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-λ curve files.
    #[arg(long)]
    pub emit_plot_data: Option<PathBuf>,
    /// Per-replicate, per-site estimates and truths.
    #[arg(long)]
    pub audit: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated λ grid.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// Trade-off table; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-site cells.
    #[arg(long)]
    pub cells: Option<PathBuf>,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let cfg = config::RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    match &cli.command {
        Command::Weights(a) => commands::weights(&cfg, a),
        Command::Transport(a) => commands::transport(&cfg, a),
        Command::Heterogeneity(a) => commands::heterogeneity(&cfg, a),
        Command::Simulate(a) => commands::simulate(&cfg, a),
        Command::Sweep(a) => commands::sweep(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.record());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.record());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
