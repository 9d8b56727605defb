//! Config-driven command-line pipeline. Every command reads one TOML run
//! config (plus `--set` overrides) and writes a manifest under the run
//! directory.

mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{load, load_lenient, Backend, LoadedConfig, Origin, RunConfig};
pub use manifest::{sha256_file, Manifest};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "relabel", version, about = "Retriever training and inference pipeline")]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,

    /// Override one config key, e.g. `--set schedule.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Normalize raw documents into a corpus file.
    Ingest,
    /// Label generated questions with the oracle to build training tuples.
    GenerateData,
    /// Train the dual encoder.
    Train,
    /// One round of confidence-routed labeling.
    AdaptiveLabel,
    /// Embed the corpus into a vector index.
    BuildIndex,
    /// Recall@k on held-out queries.
    EvalRetrieval,
    /// Retrieve, reorder and ensemble answers.
    Answer,
    /// Summarize the manifests of a run.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::GenerateData => "generate-data",
            Command::Train => "train",
            Command::AdaptiveLabel => "adaptive-label",
            Command::BuildIndex => "build-index",
            Command::EvalRetrieval => "eval-retrieval",
            Command::Answer => "answer",
            Command::Report => "report",
        }
    }
}

/// Runs `command`. `errors` are config problems found while loading; they
/// are reported together with the command's own input checks before any
/// work starts.
pub fn run(command: Command, cfg: &LoadedConfig, errors: Vec<String>) -> Result<()> {
    log::info!("running {}", command.name());
    match command {
        Command::Ingest => commands::ingest(cfg, errors),
        Command::GenerateData => commands::generate_data(cfg, errors),
        Command::Train => commands::train_cmd(cfg, errors),
        Command::AdaptiveLabel => commands::adaptive_label(cfg, errors),
        Command::BuildIndex => commands::build_index(cfg, errors),
        Command::EvalRetrieval => commands::eval_retrieval(cfg, errors),
        Command::Answer => commands::answer(cfg, errors),
        Command::Report => commands::report(cfg, errors),
    }
}

/// Parses arguments, loads the config and runs the command. Returns the
/// process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = load_lenient(cli.config.as_deref(), &cli.overrides).and_then(|(cfg, errors)| run(cli.command, &cfg, errors));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
