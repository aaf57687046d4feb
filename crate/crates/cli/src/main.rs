//! `vcfp`: batch driver for the particle and finite-volume solvers, the
//! ergodicity diagnostics and the cross-solver validation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 validation failure, 1 I/O error.

// `!(x > 0.0)` rejects NaN together with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn config(e: vcfp_core::Error) -> Self {
        Self::Config(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Io(_) => 1,
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Validation(_) => 4,
        }
    }
}

impl From<vcfp_core::Error> for CliError {
    fn from(e: vcfp_core::Error) -> Self {
        use vcfp_core::Error as E;
        match e {
            E::InvalidParameter { .. } | E::InvalidGrid(_) | E::GridMismatch(_) => Self::Config(e.to_string()),
            E::Io(m) => Self::Io(m),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "vcfp",
    version,
    about = "Voltage-conductance kinetic model: particle and PDE solvers with ergodicity diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `out` in the config; default `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the particle ensemble.
    Simulate(Common),
    /// Transient and/or steady-state finite-volume solve.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Compute the steady state (default from config).
        #[arg(long)]
        steady: bool,
        /// Run the transient solve (default from config).
        #[arg(long)]
        transient: bool,
    },
    /// Lyapunov and minorization probes and convergence-rate fits.
    Ergodicity(Common),
    /// Cross-solver and structural checks.
    Validate(Common),
    /// Print the Harris constants for each configured level R.
    Constants(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Simulate(c) | Command::Ergodicity(c) | Command::Validate(c) | Command::Constants(c) => c,
        Command::Solve { common, .. } => common,
    };
    let loaded = config::load(&common.config, common.seed)?;
    let pool = match common.threads {
        Some(0) => return Err(CliError::Config("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    }
    .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    let out = common
        .out
        .clone()
        .or_else(|| loaded.config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = commands::Context { config: loaded.config, hash: loaded.hash, out };

    pool.install(|| match cli.command {
        Command::Simulate(_) => commands::simulate(&ctx),
        Command::Solve { steady, transient, .. } => commands::solve(&ctx, steady, transient),
        Command::Ergodicity(_) => commands::ergodicity(&ctx),
        Command::Validate(_) => commands::validate(&ctx),
        Command::Constants(_) => commands::constants(&ctx),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vcfp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
