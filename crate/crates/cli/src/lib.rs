//! Command-line front end: runs configured experiments and writes CSV tables,
//! JSON summaries and whitespace-separated plot data into an output directory.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
//! numeric failures.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub mod commands;
pub mod config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] wdp::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_usage() => 2,
            CliError::Core(_) | CliError::Io { .. } => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wdp", version, about = "Simulation and pathwise estimators for weak Dirichlet processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Qv,
    Cov,
    Energy,
    Preqv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SawtoothArg {
    Sqrt,
    Linear,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the driver and convolution paths of the first ensemble member.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Quadratic variation, covariation with the driver, energy or pre-QV tables.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        which: Which,
        /// Pre-QV of a sawtooth along the accumulating subdivisions instead of
        /// the simulated process; `levels` then index those subdivisions.
        #[arg(long, value_enum)]
        sawtooth: Option<SawtoothArg>,
    },
    /// Natural decomposition, approximant convergence and orthogonality tables.
    Decompose {
        #[arg(long)]
        config: PathBuf,
    },
    /// Itô decomposition of the configured transform of the process.
    Ito {
        #[arg(long)]
        config: PathBuf,
    },
    /// Hypothesis audit of the configured kernel.
    Audit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Deterministic counterexamples; prints tables to stdout.
    Pathology {
        /// S_k table of the alternating function.
        #[arg(long)]
        alternating: bool,
        #[arg(long, default_value_t = 12)]
        depth: u32,
        /// Pre-QV table of a sawtooth along the accumulating subdivisions.
        #[arg(long, value_enum)]
        sawtooth: Option<SawtoothArg>,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 8)]
        n_max: u32,
        /// Crossing table of the randomly shifted sawtooth.
        #[arg(long)]
        shifted: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the tables as CSV into this directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Bundle every output of a run directory into one JSON and one plot-data file.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Rerun the command recorded in a manifest.
    Replay { manifest: PathBuf },
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
