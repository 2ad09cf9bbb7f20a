//! `synsum`: corpus synthesis, graph inspection, training, decoding and ROUGE
//! evaluation.
//!
//! Every subcommand writes a run manifest before doing any work. Standard
//! output carries `key: value` blocks, or one JSON object per line with
//! `--json`. Diagnostics go to stderr.

mod commands;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::output::Out;

#[derive(Debug, Parser)]
#[command(name = "synsum", version, about = "Syntax-aware abstractive summarizer")]
struct Cli {
    /// Emit JSON lines on stdout instead of key: value blocks.
    #[arg(long, global = true)]
    json: bool,

    /// Where to write the run manifest; defaults to a file next to the primary output.
    #[arg(long, global = true, value_name = "PATH")]
    manifest: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug). Logs go to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic parsed corpus.
    Synth(commands::synth::SynthArgs),
    /// Print dependency-graph statistics for one document.
    GraphInspect(commands::inspect::InspectArgs),
    /// Train a model and write checkpoints, vocabulary and metrics.
    Train(Box<commands::train::TrainArgs>),
    /// Decode summaries for every document in a corpus, one per line.
    Decode(commands::decode::DecodeArgs),
    /// Score candidate summaries against references with ROUGE-1/2/L.
    Eval(commands::eval::EvalArgs),
}

/// Options shared by every subcommand handler.
#[derive(Debug, Clone)]
pub struct Common {
    pub json: bool,
    pub manifest: Option<PathBuf>,
}

/// An invalid flag combination discovered after parsing; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let common = Common {
        json: cli.json,
        manifest: cli.manifest,
    };
    let mut out = Out::new(cli.json);
    let result = match cli.command {
        Command::Synth(a) => commands::synth::run(a, &common, &mut out),
        Command::GraphInspect(a) => commands::inspect::run(a, &common, &mut out),
        Command::Train(a) => commands::train::run(*a, &common, &mut out),
        Command::Decode(a) => commands::decode::run(a, &common, &mut out),
        Command::Eval(a) => commands::eval::run(a, &common, &mut out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            eprintln!("\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
