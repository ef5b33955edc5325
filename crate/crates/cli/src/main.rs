mod commands;
mod config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::GridKind;
use smallball_core::SmallBallError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] SmallBallError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_argument() => 2,
            _ => 3,
        }
    }
}

/// Small-ball probabilities of Gaussian processes in L2[0,1] and of their
/// finite-rank perturbations.
#[derive(Debug, Parser)]
#[command(name = "smallball", version)]
struct Cli {
    /// JSON problem description; its fields override the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the JSON report here instead of standard output.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Leading eigenvalues of a covariance kernel (CSV).
    Spectrum(SpectrumArgs),
    /// P{Σ μ_k ξ_k² ≤ r} for a weight sequence.
    Exact(ExactArgs),
    /// Small-ball asymptotics for power-law spectra.
    Asymptotic(AsymptoticArgs),
    /// Finite-rank perturbation: classification and transfer factors.
    Perturb(PerturbArgs),
    /// ω² statistics with estimated parameters.
    Durbin(DurbinArgs),
    /// Run a built-in self-check suite.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct KernelArgs {
    /// wiener, bridge or ou.
    #[arg(long)]
    kernel: Option<String>,
    /// Rate of the OU kernel exp(-alpha|s-t|).
    #[arg(long)]
    alpha: Option<f64>,
    /// Declared Green order l of the kernel.
    #[arg(long)]
    green_order: Option<u32>,
    /// Number of quadrature nodes.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum)]
    grid: Option<GridKind>,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    /// Number of eigenvalues.
    #[arg(long)]
    k: Option<usize>,
    /// Write the eigenvalue table here instead of standard output.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write sampled eigenfunctions to this file.
    #[arg(long)]
    eigenfunctions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    #[value(alias = "gil-pelaez", alias = "gil_pelaez")]
    Gilpelaez,
    #[value(alias = "saddlepoint")]
    Saddle,
    #[value(alias = "monte-carlo", alias = "monte_carlo")]
    Mc,
}

#[derive(Debug, Args)]
struct ExactArgs {
    /// CSV weight file (one μ per line, optional `# tail_sum_bound=` comment).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Use the Nyström spectrum of a kernel instead of a weight file.
    #[command(flatten)]
    kernel: KernelArgs,
    /// Eigenvalues kept from the kernel spectrum.
    #[arg(long)]
    k: Option<usize>,
    /// Threshold r = ε².
    #[arg(long, value_parser = config::parse_number)]
    r: Option<f64>,
    /// Radius ε; r = ε².
    #[arg(long, value_parser = config::parse_number)]
    eps: Option<f64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct AsymptoticArgs {
    /// naznik or dll.
    #[arg(long)]
    law: Option<String>,
    #[arg(long, value_parser = config::parse_number, allow_hyphen_values = true)]
    theta: Option<f64>,
    #[arg(long, value_parser = config::parse_number, allow_hyphen_values = true)]
    delta: Option<f64>,
    #[arg(long, value_parser = config::parse_number)]
    d: Option<f64>,
    /// DLL profile, `power:theta,delta,d`.
    #[arg(long, allow_hyphen_values = true)]
    phi: Option<String>,
    #[arg(long, value_parser = config::parse_number)]
    eps: Option<f64>,
    #[arg(long, value_parser = config::parse_number)]
    r: Option<f64>,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    /// Polynomial coefficients of one perturbing function, e.g. `0,1` for t.
    /// Repeat for each function.
    #[arg(long, allow_hyphen_values = true)]
    phi: Vec<String>,
    /// Matrix A, rows separated by `;`.
    #[arg(long, allow_hyphen_values = true)]
    a: Option<String>,
    #[arg(long)]
    classify: bool,
    #[arg(long)]
    theorem1: bool,
    #[arg(long)]
    theorem3: bool,
    #[arg(long, value_parser = config::parse_number)]
    eps: Option<f64>,
    /// Eigenvalue count N of the product diagnostics.
    #[arg(long)]
    terms: Option<usize>,
    /// Singular-value threshold of the classification.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
struct DurbinArgs {
    /// normal-location, normal-location-scale or exponential-rate.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    fisher: bool,
    #[arg(long)]
    simulate: bool,
    /// Sample size of each replication.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Quadrature nodes of the limiting operator.
    #[arg(long)]
    grid_size: Option<usize>,
    /// Write the simulated statistics here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// core, asymptotics, durbin or all.
    #[arg(long, default_value = "core")]
    suite: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == 2 {
                eprintln!("run `smallball --help` for usage");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
