mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::Layout;

/// Multi-head TTS laboratory on synthetic multi-speaker data.
#[derive(Debug, Parser)]
#[command(name = "mhtts", version)]
struct Cli {
    /// TOML configuration file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed; overrides `seed` from the file and `--set`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,

    /// Override one key, e.g. `--set train.steps=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate source, target-pool and held-out corpora.
    GenData,
    /// Write a cell's corrupted target corpus.
    Corrupt,
    /// Train the configured variant on a cell.
    Train,
    /// Synthesize `synth.text` for `synth.speaker` with a cell's checkpoint.
    Synth,
    /// Target-speaker CER of a cell's checkpoint on held-out text.
    EvalCer,
    /// Speaker probes and readout diagnostics of a cell's checkpoint.
    Probe,
    /// Encoder scaling benchmark.
    Bench,
    /// Aggregate evaluated cells into a table, median over seeds.
    Report,
    /// Print the resolved configuration.
    ShowConfig,
}

fn run(cli: Cli) -> Result<()> {
    mhtts_core::bench::ensure_single_threaded()?;
    let config = config::resolve(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    let layout = Layout::new(&cli.out);
    match cli.command {
        Command::GenData => commands::gen_data(&layout, &config),
        Command::Corrupt => commands::corrupt(&layout, &config),
        Command::Train => commands::train(&layout, &config),
        Command::Synth => commands::synth(&layout, &config),
        Command::EvalCer => commands::eval_cer(&layout, &config),
        Command::Probe => commands::probe(&layout, &config),
        Command::Bench => commands::bench(&layout, &config),
        Command::Report => commands::report(&layout),
        Command::ShowConfig => {
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", error::error_kind(&e));
            ExitCode::FAILURE
        }
    }
}
