//! `vinsta`: segment videos, inspect grounding, assemble clip states, answer
//! questions, evaluate and compare segmentation methods.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vinsta_core::segmentation::Method;

#[derive(Debug, Parser)]
#[command(name = "vinsta", version, about = "Long-video question answering over pre-extracted artifacts")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Chat backend: `http` or `script:PATH` (a JSON rule script).
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Response cache directory.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Tasks processed concurrently.
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    /// Segmentation method.
    #[arg(long, global = true)]
    pub method: Option<Method>,
    /// Number of events per video.
    #[arg(long = "k-events", global = true)]
    pub k_events: Option<usize>,
    /// Render every prompt without calling a backend.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Log verbosity (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment one embeddings file into events.
    Segment(commands::SegmentArgs),
    /// Show per-event relevance from a grounding file.
    Ground(commands::GroundArgs),
    /// Build the clip states of one task (runs the summaries).
    Assemble(commands::AssembleArgs),
    /// Answer every task of the configured manifest.
    Answer(commands::AnswerArgs),
    /// Accuracy of a results file.
    Eval(commands::EvalArgs),
    /// Compare segmentation methods.
    Ablate(commands::AblateArgs),
    /// Inspect written traces.
    Trace {
        #[command(subcommand)]
        action: commands::TraceAction,
    },
}

/// Exit status classes.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments: exit code 2.
    Config(anyhow::Error),
    /// Anything that went wrong while running: exit code 1.
    Run(anyhow::Error),
}

impl CliError {
    pub fn config(e: impl Into<anyhow::Error>) -> Self {
        CliError::Config(e.into())
    }

    pub fn run(e: impl Into<anyhow::Error>) -> Self {
        CliError::Run(e.into())
    }
}

/// What a successful command reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    PartialFailure,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("VINSTA_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.verbose);
    match commands::dispatch(&cli.global, cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::PartialFailure) => ExitCode::from(1),
        Err(CliError::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
