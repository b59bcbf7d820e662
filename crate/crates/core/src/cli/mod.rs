//! Command-line front end: argument parsing, configuration and the
//! subcommands. Every command writes its machine-readable results, a
//! plain-text summary and `run_manifest.json` under `--out`.

pub mod commands;
pub mod config;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::data::SplitMode;
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "balgraph", version, about = "Balanced signed graph denoisers for multichannel time series")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON configuration document.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "balgraph-out")]
    pub out: PathBuf,
    /// Overrides the configured split mode.
    #[arg(long, global = true)]
    pub split: Option<SplitMode>,
    /// Overrides a configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY.PATH=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generates a synthetic two-class dataset with known graphs.
    Synth,
    /// Learns balanced signed graphs from a dataset.
    LearnGraph,
    /// Trains the class-0 and class-1 denoisers.
    Train,
    /// Classifies the test partition and reports metrics.
    Eval {
        /// Directory with the checkpoints written by `train`.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Also write both reconstruction errors for every test sample.
        #[arg(long)]
        audit: bool,
    },
    /// Measures Lanczos filter error and wall time over a size ladder.
    LanczosBench,
    /// Dumps a checkpoint's cutoffs, polarities and parameter counts.
    Inspect {
        /// Model checkpoint (JSON).
        model: PathBuf,
    },
}

/// Parses the process arguments, runs the command and returns the exit
/// code.
pub fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.common.overrides.clone();
    if let Some(seed) = cli.common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(split) = cli.common.split {
        let name = match split {
            SplitMode::Ratio => "ratio",
            SplitMode::Loso => "loso",
        };
        overrides.push(format!("split=\"{name}\""));
    }
    let cfg = config::load_config(cli.common.config.as_deref(), &overrides)?;
    let out = &cli.common.out;
    match &cli.command {
        Command::Synth => commands::cmd_synth(&cfg, out),
        Command::LearnGraph => commands::cmd_learn_graph(&cfg, out),
        Command::Train => commands::cmd_train(&cfg, out),
        Command::Eval { checkpoints, audit } => commands::cmd_eval(&cfg, out, checkpoints.as_deref(), *audit),
        Command::LanczosBench => commands::cmd_lanczos_bench(&cfg, out),
        Command::Inspect { model } => commands::cmd_inspect(&cfg, out, model),
    }
}
