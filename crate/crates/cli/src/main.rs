//! `taxcode`: generate data, run the four-stage training pipeline or its
//! individual steps, predict, rebuild paths from leaves and score predictions.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 filesystem error.
//! Logging goes to stderr, filtered by `TAXON_LOG` (error, warn, info, debug).

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Overrides, Resolved};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "taxcode", version, about = "Hierarchical tax-code classification")]
struct Cli {
    /// JSON run configuration. Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic taxonomy and corpus.
    Gen(commands::GenArgs),
    /// Drop invalid, duplicate and conflicting records.
    Cleanse(commands::CleanseArgs),
    /// Depth-stratified train/val/test split.
    Split(commands::SplitArgs),
    /// Run all four stages and evaluate on the test split.
    Pipeline(commands::PipelineArgs),
    /// Train a model on prepared splits.
    Train(commands::TrainArgs),
    /// Distill a consistency judge or annotate records with one.
    #[command(subcommand)]
    Judge(commands::JudgeCommand),
    /// Predict tax-code paths for records.
    Predict(commands::PredictArgs),
    /// Rebuild predicted paths from their leaves.
    Repath(commands::RepathArgs),
    /// Score a prediction dump against ground truth.
    Eval(commands::EvalArgs),
    /// Render a saved evaluation report, optionally against a baseline.
    Report(commands::ReportArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let resolved = Resolved::load(cli.config.as_deref(), &cli.overrides)?;
    let manifest = cli.manifest.as_deref();
    match cli.command {
        Command::Gen(a) => commands::gen(&a, &resolved, manifest),
        Command::Cleanse(a) => commands::cleanse(&a, &resolved, manifest),
        Command::Split(a) => commands::split(&a, &resolved, manifest),
        Command::Pipeline(a) => commands::pipeline(&a, &resolved, manifest),
        Command::Train(a) => commands::train(&a, &resolved, manifest),
        Command::Judge(c) => commands::judge(&c, &resolved, manifest),
        Command::Predict(a) => commands::predict(&a, &resolved, manifest),
        Command::Repath(a) => commands::repath(&a, &resolved, manifest),
        Command::Eval(a) => commands::eval(&a, &resolved, manifest),
        Command::Report(a) => commands::report(&a, &resolved, manifest),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TAXON_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
