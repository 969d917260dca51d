//! The `nat` command line: argument parsing, config loading and one
//! handler per subcommand.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "nat", version, about = "Noise-aware training for document entity extraction")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Pipeline config file; the built-in mini-invoice setup when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Config override, e.g. `--set noise_aware.lambda=0.2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Wall-clock budget in seconds; overrides `t_max`.
    #[arg(long, global = true)]
    pub max_seconds: Option<f64>,
    /// Worker threads for independent runs (ablation seeds).
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Tx,
    Ss,
    St,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a FUNSD annotation directory to the corpus format.
    Ingest {
        dir: PathBuf,
        /// Labeled documents to split off as H.
        #[arg(long)]
        h: Option<usize>,
        /// Documents to split off as unlabeled U.
        #[arg(long)]
        u: Option<usize>,
    },
    /// Generate the mini-invoice benchmark corpora.
    GenSynth,
    /// Phase I only.
    Pretrain,
    /// Fit the weak sources and label U.
    WeakLabel,
    /// Build the synthetic corpus S from H.
    Augment,
    /// The full three-phase pipeline.
    Train,
    Baseline {
        #[arg(long, value_enum)]
        kind: BaselineArg,
    },
    /// Full pipeline against its three ablations.
    Ablate {
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
        seeds: Vec<u64>,
    },
    /// Score a checkpoint on a test corpus.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test corpus; the configured one when absent.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// F1 against |H| for the pipeline and the transfer baseline.
    Curve {
        #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 20, 30])]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
        seeds: Vec<u64>,
    },
    /// Check corpus files against the document invariants.
    Validate {
        #[arg(required = true)]
        corpora: Vec<PathBuf>,
    },
}

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// Training stopped early on the time budget.
    Degraded,
    /// The command ran but found problems, e.g. invalid documents.
    Failed,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Complete => 0,
            Outcome::Degraded => 2,
            Outcome::Failed => 1,
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    commands::dispatch(&cli.global, cli.command)
}
