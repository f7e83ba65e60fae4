//! `scriptor-id`: corpus synthesis, page preprocessing, training and evaluation.

mod commands;
mod config;

use clap::{Parser, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Synth,
    Preprocess,
    Train,
    Eval,
}

#[derive(Debug, Parser)]
#[command(name = "scriptor-id", version, about = "Text-independent writer identification")]
struct Cli {
    command: Command,
    /// experiment configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// also write an SVG accuracy chart (eval)
    #[arg(long)]
    plot: bool,
    /// output directory, overriding the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// master seed, overriding the config
    #[arg(long)]
    seed: Option<u64>,
}

fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("SCRIPTOR_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("SCRIPTOR_THREADS must be a positive integer, got `{v}`")),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    scriptor::exec::init_threads(threads);

    let mut cfg = match config::ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cfg.out_dir(cli.out.as_deref());
    let result = match cli.command {
        Command::Synth => commands::synth(&cfg, &out),
        Command::Preprocess => commands::preprocess(&cfg, &out),
        Command::Train => commands::train(&cfg, &out),
        Command::Eval => commands::eval(&cfg, &out, cli.plot),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
