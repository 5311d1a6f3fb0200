//! Binary front end: argument parsing and exit-code policy. All behavior
//! lives in the library's `cli` module.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use carp::cli::{self, Branch, EvalMode, EvalOptions, Suite};
use carp::CarpError;

#[derive(Parser)]
#[command(
    name = "carp",
    version,
    about = "Train and evaluate self-supervised prototype assignments over random partitions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a key=value config file into an output directory
    Train {
        /// Path to the run configuration (empty file = documented defaults)
        #[arg(long)]
        config: PathBuf,
        /// Output directory for metrics, checkpoints, and the resolved config
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint with the k-NN or k-means protocol
    Eval {
        /// Checkpoint file, or a training output directory
        #[arg(long)]
        ckpt: PathBuf,
        /// Evaluation protocol
        #[arg(long, value_enum)]
        mode: EvalMode,
        /// Which branch to load when --ckpt is a directory
        #[arg(long, value_enum, default_value = "student")]
        branch: Branch,
        /// Neighbor count for the k-NN protocol
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Vote temperature for the k-NN protocol
        #[arg(long, default_value_t = 0.07)]
        tau: f64,
        /// Cluster count for the k-means protocol (default: dataset classes)
        #[arg(long)]
        clusters: Option<usize>,
        /// Run config describing the dataset (defaults apply when omitted)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for the k-means redos
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an ablation suite and write its CSV and SVG summaries
    Ablate {
        /// Which axis to sweep
        #[arg(long, value_enum)]
        suite: Suite,
        /// Output directory for {suite}.csv and {suite}.svg
        #[arg(long)]
        out: PathBuf,
        /// Seeds per grid cell
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// Override the base config's epoch count
        #[arg(long)]
        epochs: Option<usize>,
        /// Base run config for the grid (defaults apply when omitted)
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(command: Command) -> Result<(), CarpError> {
    match command {
        Command::Train { config, out } => cli::cmd_train(&config, &out),
        Command::Eval { ckpt, mode, branch, k, tau, clusters, config, seed } => {
            cli::cmd_eval(&EvalOptions { ckpt, mode, branch, k, tau, clusters, config, seed })
        }
        Command::Ablate { suite, out, seeds, epochs, config } => {
            cli::cmd_ablate(suite, &out, seeds, epochs, config.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
