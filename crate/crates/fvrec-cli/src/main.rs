//! Experiment front door: prepare raw data, generate synthetic datasets,
//! train a model, evaluate it, and render result tables.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric/training
//! failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fvrec_core::RunConfig;

#[derive(Parser)]
#[command(
    name = "fvrec",
    about = "Fairness-aware VAE recommenders with unseen-user evaluation",
    after_help = config_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn config_help() -> String {
    format!(
        "CONFIG KEYS (key = value files, overridden by --set):\n{}",
        RunConfig::describe_keys()
    )
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.epochs=50 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> fvrec_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for spec in &self.sets {
            cfg.apply_override(spec)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ingest raw rating/listening logs into a canonical dataset directory.
    Prepare {
        /// Dataset layout: movielens | lastfm.
        #[arg(long)]
        kind: String,
        /// Ratings / listening events file.
        #[arg(long)]
        ratings: PathBuf,
        /// User attributes file (user, gender, age).
        #[arg(long)]
        users: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a planted-factor synthetic dataset directory.
    Synth {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the configured model on a canonical dataset.
    Train {
        /// Canonical dataset directory (from prepare or synth).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the checkpoint, log, and report.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint or SLIM model on the test users.
    Evaluate {
        /// Model file: a checkpoint (model.ckpt) or SLIM model (slim.model).
        #[arg(long)]
        model: PathBuf,
        /// Canonical dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output report file (JSON).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Render evaluation reports as a result table.
    Report {
        /// Report files produced by evaluate.
        files: Vec<PathBuf>,
    },
}

fn run() -> fvrec_core::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Prepare {
            kind,
            ratings,
            users,
            out,
            config,
        } => commands::prepare(&kind, &ratings, &users, &out, &config.load()?),
        Command::Synth { out, config } => commands::synth(&out, &config.load()?),
        Command::Train { data, out, config } => commands::train(&data, &out, &config.load()?),
        Command::Evaluate {
            model,
            data,
            out,
            config,
        } => commands::evaluate(&model, &data, &out, &config.load()?),
        Command::Report { files } => commands::report(&files),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
