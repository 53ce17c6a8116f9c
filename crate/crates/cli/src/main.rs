use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use stepleak_cli::{run, Overrides, Subcommand};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    /// Generate a synthetic cohort and write its CSVs.
    Synth,
    /// Write feature matrices for `[features] configs`.
    Features,
    /// Run attribute inference.
    Infer,
    /// Run linkability attacks.
    Link,
    /// Summarize result files into tables, ROC and PCA CSVs.
    Report,
}

#[derive(Debug, Parser)]
#[command(name = "stepleak", version, about = "Privacy-risk audit for step-count data")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config `out`, else ./stepleak-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STEPLEAK_LOG", "warn")).init();
    let args = Args::parse();
    let sub = match args.command {
        Command::Synth => Subcommand::Synth,
        Command::Features => Subcommand::Features,
        Command::Infer => Subcommand::Infer,
        Command::Link => Subcommand::Link,
        Command::Report => Subcommand::Report,
    };
    let overrides = Overrides {
        seed: args.seed,
        out: args.out,
        jobs: args.jobs,
    };
    match run(sub, &args.config, &overrides) {
        Ok(outputs) => {
            for p in outputs {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
