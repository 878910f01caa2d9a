mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::UsageError;
use crate::config::Options;

/// Relation prediction on knowledge graphs with attention-based message
/// passing and semantic paths.
#[derive(Parser, Debug)]
#[command(name = "kgrelpred", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model per seed and write checkpoints and logs.
    Train(Options),
    /// Rank relations of a split with a trained checkpoint.
    Evaluate(Options),
    /// Top-k relations for a head/tail pair.
    Predict(Options),
    /// Semantic paths between two entities, or training vocabulary statistics.
    Paths(Options),
    /// Mechanism subsets with and without paths, optionally a hop/length grid.
    Ablate(Options),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KGRELPRED_LOG", "info"))
        .format_timestamp_secs()
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(o) => commands::train(o),
        Command::Evaluate(o) => commands::evaluate(o),
        Command::Predict(o) => commands::predict(o),
        Command::Paths(o) => commands::paths(o),
        Command::Ablate(o) => commands::ablate(o),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
