//! Command-line front end for graphmem: preprocessing, training,
//! cross-validation, evaluation, gradient checks and cluster export.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;

pub use config::RunConfig;

/// Environment variable naming the diffusion cache directory.
pub const CACHE_ENV: &str = "GRAPHMEM_CACHE_DIR";

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<graphmem::Error> for CliError {
    fn from(e: graphmem::Error) -> Self {
        use graphmem::Error as E;
        let code = match e {
            E::Config(_) => EXIT_USAGE,
            E::Convergence { .. } | E::NonFinite { .. } => EXIT_NUMERIC,
            E::Shape { .. } | E::Contract(_) | E::Format { .. } | E::Data(_) | E::Io(_) => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "graphmem", version, about = "Memory-layer graph networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: config::Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on every graph and write a checkpoint and an epoch log.
    Train {
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Stratified k-fold cross-validation; writes cv_metrics.csv.
    Cv {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        /// Run only this fold.
        #[arg(long)]
        fold: Option<usize>,
        /// Worker threads for folds (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Evaluate a checkpoint on the configured dataset.
    Eval {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write the metrics CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-layer node to cluster assignments as CSV.
    ExportClusters {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every backward rule and both models.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_rule: Option<String>,
    },
    /// Compute and cache diffusion matrices.
    Preprocess {
        #[command(flatten)]
        args: ConfigArgs,
        /// Cache directory (overrides the environment variable).
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
