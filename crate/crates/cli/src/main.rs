//! `jls`: simulate jump linear systems and recover their minimal
//! realization from ensemble input-output data.
//!
//! Exit codes: 0 success, 2 model error, 3 configuration error,
//! 4 inference failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable naming the directory searched for model files that
/// are not found relative to the working directory.
pub const FIXTURE_DIR_ENV: &str = "JLS_FIXTURE_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "jls",
    version,
    about = "Minimal realization of jump linear systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Roll out one trajectory: T input steps followed by T free steps.
    Simulate(SimulateArgs),
    /// Build the observation matrices and write them as a bundle.
    Excite(ExciteArgs),
    /// Infer the state dimension from the rank of the observation matrix.
    EstimateDim(EstimateArgs),
    /// Infer the state dimension, then estimate the number of modes.
    EstimateModes(ModesArgs),
    /// Controllability, observability, stability and minimality diagnostics.
    Check(CheckArgs),
    /// Ranks of the expectation operators for T = 1..T_max.
    Scan(ScanArgs),
}

#[derive(Args, Debug, Clone)]
struct OutputArgs {
    /// Write here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Defaults to csv for `scan` and json elsewhere.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    MonteCarlo,
    Exact,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum FactorizationArg {
    Oracle,
    Blind,
}

#[derive(Args, Debug, Clone)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input length; the rollout runs 2T steps.
    #[arg(long = "T", conflicts_with = "switches")]
    t: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated 1-based modes theta(1)..theta(K-1) for a K-step
    /// replay. theta(0) never matters because x_0 = 0.
    #[arg(long)]
    switches: Option<String>,
    /// u_0 = e_1 and zero afterwards, instead of random inputs.
    #[arg(long)]
    impulse: bool,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug, Clone)]
struct ObservationArgs {
    /// Model file; required unless --observations is given.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Previously written observation bundle (json or csv).
    #[arg(long, conflicts_with_all = ["t", "n", "mode"])]
    observations: Option<PathBuf>,
    #[arg(long = "T")]
    t: Option<usize>,
    /// Copies per basis input in Monte Carlo mode.
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct ExciteArgs {
    #[command(flatten)]
    obs: ObservationArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug, Clone)]
struct EstimateArgs {
    #[command(flatten)]
    obs: ObservationArgs,
    /// Relative rank tolerance for the observation matrix.
    #[arg(long, default_value_t = jls_core::numerics::DEFAULT_RANK_TOL)]
    tol: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug, Clone)]
struct ModesArgs {
    #[command(flatten)]
    est: EstimateArgs,
    #[arg(long, value_enum, default_value = "oracle")]
    factorization: FactorizationArg,
    /// Trace of Z; defaults to n^2.
    #[arg(long)]
    b: Option<f64>,
    #[arg(long = "max-iter", default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 8)]
    starts: usize,
    /// Relative eigenvalue threshold for the rank of P.
    #[arg(long = "mode-tol", default_value_t = jls_core::modes::DEFAULT_MODE_TOL)]
    mode_tol: f64,
}

#[derive(Args, Debug, Clone)]
struct CheckArgs {
    #[arg(long)]
    model: PathBuf,
    /// Horizon for the rank diagnostic; defaults to n^2 + n - 1.
    #[arg(long = "T")]
    t: Option<usize>,
    /// 1-based switch sequence for the worst-case sample bound.
    #[arg(long)]
    switches: Option<String>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug, Clone)]
struct ScanArgs {
    #[arg(long)]
    model: PathBuf,
    /// Largest horizon; defaults to n^2 + n + 2.
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long, default_value_t = jls_core::numerics::DEFAULT_RANK_TOL)]
    tol: f64,
    #[command(flatten)]
    out: OutputArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() {
                commands::EXIT_CONFIG
            } else {
                0
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
