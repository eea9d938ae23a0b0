//! `esr`: synthesize a corpus, train, cross-validate and explain stone classifiers.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use esr_core::View;

use config::{Overrides, RunConfig};

/// Bad input: config, flags or missing prerequisites. Exit code 2.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

#[derive(Parser, Debug)]
#[command(name = "esr", version, about = "Endoscopic stone recognition pipeline")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    view: Option<View>,
    /// Overrides the generator and cross-validation seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory. Defaults to `<out_dir>/<timestamp>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the number of training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the synthetic corpus into `corpus/`.
    Synth,
    /// Train one network per view on its training split.
    Train,
    /// Repeated group-aware cross-validation with metric tables and confusion matrices.
    Evaluate,
    /// Grad-CAM overlays and hot-spot localization for a trained network.
    Explain,
    /// Summarize the evaluation and hot-spot reports of a run.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Explain => "explain",
            Command::Report => "report",
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides { view: cli.view, seed: cli.seed, epochs: cli.epochs })?;
    let dir = cli
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string()));
    let mut run = commands::Run::open(dir, cfg)?;
    let out = match cli.command {
        Command::Synth => commands::synth(&mut run)?,
        Command::Train => commands::train_views(&mut run)?,
        Command::Evaluate => commands::evaluate(&mut run)?,
        Command::Explain => commands::explain(&mut run)?,
        Command::Report => commands::report(&mut run)?,
    };
    log::info!("run directory {}", run.dir.display());
    run.finish(cli.command.name())?;
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ValidationError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
