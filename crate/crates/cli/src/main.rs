//! Latent-space anomaly detection: train a conditioned-prior VAE ensemble,
//! score a held-out split, and report ROC/AUC against baselines.

mod commands;
mod config;
mod manifest;
mod outputs;
mod summary;

use clap::{Parser, Subcommand};
use clvae::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "clvae",
    version,
    about = "Anomaly detection with class-conditioned latent priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the ensemble; writes checkpoints and a run manifest.
    Train {
        /// TOML experiment config (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed; member i trains with seed + i.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of ensemble members.
        #[arg(long)]
        ensemble: Option<usize>,
        /// Comma-separated methods (clvae-latent, clvae-mse, vae-mse,
        /// cnn-confidence, pca-loglik).
        #[arg(long)]
        methods: Option<String>,
        /// Run directory for checkpoints and metrics.
        #[arg(long)]
        out: Option<String>,
        /// Training worker threads.
        #[arg(long)]
        workers: Option<usize>,
        /// Use the full training set instead of the configured subsample.
        #[arg(long)]
        full_data: bool,
    },
    /// Score the test split of a trained run and write metrics.
    Evaluate {
        /// Run directory written by `train`.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        /// Restrict to a comma-separated subset of the trained methods.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write each member's posterior means for train and test as CSV.
    ExportLatent {
        /// Run directory written by `train`.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render report.json and report.txt from an evaluated run.
    Report {
        /// Run directory written by `train` and `evaluate`.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
}

/// 1 = bad usage or config, 2 = missing or unreadable input, 3 = numeric
/// failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Dataset { .. } | Error::Io(_) | Error::Checkpoint(_) => 2,
        Error::Numeric(_) | Error::Shape(_) | Error::Graph(_) => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train {
            config,
            seed,
            ensemble,
            methods,
            out,
            workers,
            full_data,
        } => {
            let overrides = config::Overrides {
                seed,
                ensemble,
                methods,
                out,
                workers,
                full_data,
            };
            config::ExperimentConfig::load(config.as_deref(), &overrides)
                .and_then(|cfg| commands::train::run(&cfg))
        }
        Command::Evaluate {
            out,
            methods,
            workers,
        } => commands::evaluate::run(&out, methods.as_deref(), workers),
        Command::ExportLatent { out, workers } => commands::export_latent::run(&out, workers),
        Command::Report { out } => commands::report::run(&out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
