//! `exprnorm` command-line interface.

mod commands;
mod manifest;
mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::Flags;

#[derive(Parser)]
#[command(name = "exprnorm", version, about = "Expression skeleton normalization and data generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discover rewrite rules by enumeration and write a rules file.
    Discover(Flags),
    /// Simplify one prefix expression per input line.
    Simplify {
        #[command(flatten)]
        flags: Flags,
        /// Input file (default: stdin).
        input: Option<std::path::PathBuf>,
    },
    /// Generate a training dataset.
    Generate(Flags),
    /// Time simplification over sampled skeletons.
    Bench(Flags),
    /// Score predicted skeletons against the truth.
    Score(Flags),
}

/// Outcome of a command that did not fail fatally.
pub enum Status {
    Ok,
    /// Some input lines failed.
    Partial,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, flags) = match &cli.command {
        Command::Discover(f) => ("discover", f),
        Command::Simplify { flags, .. } => ("simplify", flags),
        Command::Generate(f) => ("generate", f),
        Command::Bench(f) => ("bench", f),
        Command::Score(f) => ("score", f),
    };
    let flags = match flags.clone().resolve() {
        Ok(f) => f,
        Err(e) => return fatal(name, &e),
    };
    if let Some(n) = flags.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fatal(name, &e.to_string());
        }
    }
    let result = match &cli.command {
        Command::Discover(_) => commands::discover(&flags),
        Command::Simplify { input, .. } => commands::simplify(&flags, input.as_deref()),
        Command::Generate(_) => commands::generate(&flags),
        Command::Bench(_) => commands::bench(&flags),
        Command::Score(_) => commands::score(&flags),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(1),
        Err(e) => fatal(name, &e),
    }
}

fn fatal(command: &str, message: &str) -> ExitCode {
    eprintln!("exprnorm {command}: {message}");
    ExitCode::from(2)
}
