//! `smore-lab`: verification suites, dataset generation, training,
//! evaluation and sweeps from a TOML experiment config.
//!
//! Exit codes: 0 success, 1 check or runtime failure, 2 configuration error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Failure;

#[derive(Parser, Debug)]
#[command(name = "smore-lab", version, about = "Offline goal-conditioned RL experiments on tabular environments")]
pub struct Cli {
    /// Experiment config (TOML with [env], [data], [agent] and [eval] sections).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Parallel (setting, seed) cells in a sweep.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Replaces the dataset seed and the seed list with this one seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run numeric verification suites and print a JSON report.
    Verify {
        /// conjugates, duality, bounds, gradients or all.
        #[arg(default_value = "all")]
        suite: String,
    },
    /// Collect an offline dataset.
    GenData,
    /// Train one agent, checkpointing and logging at every eval interval.
    Train,
    /// Evaluate a checkpoint.
    Eval {
        /// Defaults to `agent.ckpt` in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate the cartesian product of every list-valued key.
    Sweep,
    /// Re-aggregate `metrics.csv` of a finished sweep.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
    }
}
