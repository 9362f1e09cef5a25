//! `disfas`: generate synthetic corpora, train, evaluate and sweep.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use disfas::Error;

#[derive(Parser)]
#[command(name = "disfas", version, about = "Disentangled liveness representation training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// TOML or JSON run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Seed override for data generation and training.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (PNG images plus manifest.tsv).
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Train on the source domains of the configured split.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        train: commands::TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a target domain with a trained checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        target: usize,
        /// fixed_half or eer_on_validation
        #[arg(long, default_value = "eer_on_validation")]
        policy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate a grid of (target, ablation, seed) cells.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        sweep: commands::SweepArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_)
        | Error::Image(_)
        | Error::Json(_)
        | Error::Ingestion { .. }
        | Error::ManifestParse { .. }
        | Error::ManifestValidation { .. }
        | Error::Checkpoint { .. }
        | Error::CheckpointVersion { .. } => 3,
        Error::Divergence { .. } => 4,
        Error::Protocol(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { cfg, out, force } => commands::generate(&cfg, &out, force),
        Command::Train { cfg, train, out } => commands::train(&cfg, &train, &out),
        Command::Eval {
            checkpoint,
            manifest,
            target,
            policy,
            out,
        } => commands::eval(&checkpoint, &manifest, target, &policy, &out),
        Command::Sweep { cfg, sweep, out } => commands::sweep(&cfg, &sweep, &out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
