//! Command line driver: CSV in, JSON or TSV out.
//!
//! Exit codes: 0 on success, 2 for input problems (flags, config file, CSV),
//! 3 for numerical failures on valid input. Errors go to stderr as a one-line
//! JSON document.

mod commands;
mod error;
mod ingest;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Parser)]
#[command(
    name = "lpci",
    version,
    about = "Local polynomial point estimates and bias-corrected confidence intervals"
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Point estimate with an interval; defaults to the MSE bandwidth
    Fit(EstimateArgs),
    /// Confidence interval; defaults to the coverage-optimal bandwidth
    Ci(EstimateArgs),
    /// Bandwidth selection report without the final fit
    Bwselect(EstimateArgs),
    /// Variance-minimizing bandwidth ratios over a kernel/degree grid
    RhoTable(RhoTableArgs),
    /// 401-point grid of the corrected and reference equivalent kernels
    KernelCurves(KernelCurvesArgs),
    /// Monte Carlo coverage study over the shipped data-generating processes
    Simulate(SimulateArgs),
}

#[derive(Args)]
pub struct EstimateArgs {
    /// CSV data file with header `x,y`
    data: PathBuf,
    /// Polynomial degree of the main fit
    #[arg(long)]
    p: Option<usize>,
    /// Derivative order to estimate
    #[arg(long)]
    deriv: Option<usize>,
    /// uniform | triangular | epanechnikov
    #[arg(long)]
    kernel: Option<String>,
    /// Bandwidth rule: mse | ce | to | <positive number>
    #[arg(long)]
    bw: Option<String>,
    /// Bandwidth ratio h/b: positive number, or `auto` to select from the
    /// kernel shape
    #[arg(long)]
    rho: Option<String>,
    /// Nominal confidence level
    #[arg(long)]
    level: Option<f64>,
    /// Evaluation point on the covariate scale
    #[arg(long)]
    eval: Option<f64>,
    /// auto | interior | left | right
    #[arg(long)]
    boundary: Option<String>,
    /// Centering: conventional | rbc
    #[arg(long)]
    method: Option<String>,
    /// Variance flavor: hc0 | hc1 | hc2 | hc3
    #[arg(long)]
    flavor: Option<String>,
    /// Length-vs-coverage preference in (0, 1) for the trade-off rule
    #[arg(long)]
    weight: Option<f64>,
    /// Rate exponent for the trade-off rule; default balances coverage decay
    #[arg(long = "eta-to")]
    eta_to: Option<f64>,
    /// key=value defaults file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct RhoTableArgs {
    /// Restrict to a single kernel
    #[arg(long)]
    kernel: Option<String>,
    /// Largest polynomial degree in the grid
    #[arg(long = "p-max")]
    p_max: Option<usize>,
    /// Double the quadrature nodes, for convergence checks
    #[arg(long = "double-nodes")]
    double_nodes: bool,
    /// key=value defaults file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct KernelCurvesArgs {
    /// uniform | triangular | epanechnikov
    #[arg(long)]
    kernel: Option<String>,
    /// Polynomial degree of the underlying fit
    #[arg(long)]
    p: Option<usize>,
    /// Derivative order
    #[arg(long)]
    deriv: Option<usize>,
    /// Bandwidth ratio: positive number or `auto`
    #[arg(long)]
    rho: Option<String>,
    /// interior | left | right
    #[arg(long)]
    boundary: Option<String>,
    /// key=value defaults file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// sine-damped | hetero-poly | null-linear
    #[arg(long)]
    dgp: Option<String>,
    /// Sample size per replication
    #[arg(long)]
    n: Option<usize>,
    /// Number of replications
    #[arg(long)]
    reps: Option<usize>,
    /// Base seed; replication r derives its stream from (seed, r)
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated pipeline list; defaults to all five
    #[arg(long)]
    methods: Option<String>,
    /// Check-loss asymmetry on the coverage error
    #[arg(long)]
    tau: Option<f64>,
    /// Nominal confidence level
    #[arg(long)]
    level: Option<f64>,
    /// Evaluation point
    #[arg(long)]
    eval: Option<f64>,
    /// Also write the per-method table to this path
    #[arg(long)]
    tsv: Option<PathBuf>,
    /// key=value defaults file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

fn dispatch(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Commands::Fit(args) => {
            let spec = commands::resolve_estimate(&args, "mse")?;
            commands::run_estimate(&args.data, &spec)
        }
        Commands::Ci(args) => {
            let spec = commands::resolve_estimate(&args, "ce")?;
            commands::run_estimate(&args.data, &spec)
        }
        Commands::Bwselect(args) => {
            let spec = commands::resolve_estimate(&args, "mse")?;
            commands::run_bwselect(&args.data, &spec)
        }
        Commands::RhoTable(args) => commands::run_rho_table(&args),
        Commands::KernelCurves(args) => commands::run_kernel_curves(&args),
        Commands::Simulate(args) => {
            let out = commands::run_simulate(&args)?;
            if let Some((path, body)) = out.tsv {
                std::fs::write(&path, body).map_err(|e| {
                    CliError::input(format!("cannot write {}: {e}", path.display()))
                })?;
            }
            Ok(out.stdout)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(out) => {
            if out.ends_with('\n') {
                print!("{out}");
            } else {
                println!("{out}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
