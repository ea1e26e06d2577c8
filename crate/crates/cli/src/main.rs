//! idseg command line: synthetic data generation, VIA ingestion, offline
//! preprocessing, training and evaluation.

mod cmd;
mod manifest;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "idseg", version, about = "ID card segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ID-card dataset (images, masks, meta.csv).
    Synth(cmd::synth::SynthArgs),
    /// Rasterize VIA 2.x polygon annotations into a dataset directory.
    IngestVia(cmd::ingest_via::IngestArgs),
    /// Expand a dataset offline with the mask-aware preprocessing ops.
    Preprocess(cmd::preprocess::PreprocessArgs),
    /// Train a segmentation model (mobileunet, densenet10 or hog-svm).
    Train(cmd::train::TrainArgs),
    /// Evaluate a model on a dataset split; optionally benchmark latency.
    Eval(cmd::eval::EvalArgs),
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(args) => cmd::synth::run(args),
        Command::IngestVia(args) => cmd::ingest_via::run(args),
        Command::Preprocess(args) => cmd::preprocess::run(args),
        Command::Train(args) => cmd::train::run(args),
        Command::Eval(args) => cmd::eval::run(args),
    }
}
