//! `geotrack`: parse, split, build graphs, train, evaluate and predict.

mod commands;
mod config;
mod prefix;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geotrack::nets::Variant;

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(
    name = "geotrack",
    version,
    about = "Graph-aware storm track prediction"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// HURDAT2 corpus file.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `graph` or `vanilla`.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent cross-validation rounds.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the corpus and write the train/validation/test manifest.
    Prepare,
    /// Build the spatial graph from the training storms.
    BuildGraph {
        /// Use this split manifest instead of splitting afresh.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Train one model and write its checkpoint and epoch history.
    Train {
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Score a checkpoint on the test storms.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// K-fold cross-validation of both variants.
    Crossval,
    /// Predict the next position after a prefix CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prefix: PathBuf,
    },
    /// Write a synthetic corpus generated on a random latent graph.
    Synth,
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let overrides = Overrides {
        corpus: cli.common.corpus,
        out: cli.common.out,
        seed: cli.common.seed,
        variant: cli.common.variant,
        jobs: cli.common.jobs,
    };
    match commands::run(cli.command, cli.common.config.as_deref(), overrides) {
        Ok(code) => code,
        Err(e) => {
            let report = serde_json::json!({
                "error": e.to_string(),
                "causes": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
            });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
