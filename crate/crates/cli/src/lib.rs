//! Command-line runner: training experiments, measurements and the
//! landscape, Hessian, sensitivity, theorem and head-projection reports.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "equidiag", version, about = "Measure learned rotation equivariance of toy force models")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Experiment config (TOML, or JSON by extension). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true, env = "EQUIDIAG_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Rotations per sample: evaluation rotations for train and measure, the
    /// largest N for sensitivity.
    #[arg(long, global = true)]
    pub rotations: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CheckpointArg {
    /// Parameter file (with its `.json` sidecar). Defaults to `<out>/model.bin`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write the metrics series, plots, checkpoint and manifest.
    Train,
    /// Print the loss decomposition of a checkpoint on the held-out split as JSON.
    Measure {
        #[command(flatten)]
        checkpoint: CheckpointArg,
        /// Enumerate a finite group instead of sampling rotations.
        #[arg(long)]
        exact_group: bool,
    },
    /// L_mean and L_equiv on a 2D slice through the Hessian eigenvectors.
    Landscape {
        #[command(flatten)]
        checkpoint: CheckpointArg,
    },
    /// Condition numbers of the three loss Hessians over minibatches.
    Hessian {
        #[command(flatten)]
        checkpoint: CheckpointArg,
        #[arg(long)]
        batches: Option<usize>,
    },
    /// Bootstrap standard error of the percent as a function of N.
    Sensitivity {
        #[command(flatten)]
        checkpoint: CheckpointArg,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Quadratic-form identity and scaling checks on the equivariant subspace.
    Theorems {
        #[command(flatten)]
        checkpoint: CheckpointArg,
    },
    /// Split the graph force head into its equivariant part and deviation.
    ProjectHead {
        #[command(flatten)]
        checkpoint: CheckpointArg,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        // A second call in the same process fails harmlessly.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match commands::dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
