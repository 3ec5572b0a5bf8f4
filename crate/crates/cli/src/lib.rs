//! Command-line front end: argument parsing, run configuration and the
//! commands behind the `clvdqn` binary.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use clvdqn_core::Mode;

pub use commands::run;
pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] clvdqn_core::Error),
}

impl CliError {
    /// 1 usage or configuration, 2 data, 3 training divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(clvdqn_core::Error::Config(_)) => 1,
            CliError::Core(clvdqn_core::Error::Divergence { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "clvdqn", version, about = "Customer lifetime value with deep Q-networks over RFM-I states")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// key=value configuration file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// discrete or mixed
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    /// Worker threads for parallel sections
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Omit the timestamp line from text reports
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    /// Write the effective configuration to this file before running
    #[arg(long, global = true)]
    pub dump_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Flatten customer timelines into transition tuples
    BuildTransitions {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a Q-network on transition tuples
    Train {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        validation_fraction: Option<f64>,
    },
    /// Compare logged outcomes where actions matched or deviated from the policy
    Evaluate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// CSV copy of the report
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Per-action CLV of one customer state
    Clv {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Raw state as r,f,m,ir,if
        #[arg(long, allow_hyphen_values = true)]
        state: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the autonomous explore-and-train loop on a synthetic population
    Simulate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        customers: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Export per-action values along one or two state dimensions
    Curves {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// One or two comma-separated dimensions, e.g. recency,frequency
        #[arg(long)]
        dims: String,
        /// lo:hi per dimension, comma-separated
        #[arg(long, allow_hyphen_values = true)]
        range: String,
        #[arg(long, default_value_t = 50)]
        resolution: usize,
        /// Values of the other dimensions as r,f,m,ir,if (defaults to the stored medians)
        #[arg(long)]
        reference: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Parses arguments (including the program name) and runs the command,
/// returning what the binary would print on stdout.
pub fn run_args<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(&cli)
}
