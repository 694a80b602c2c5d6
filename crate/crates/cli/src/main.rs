use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sharenet_core::{Error, Result};

mod commands;
mod config;

use config::ExperimentConfig;

/// Incremental learning with a frozen shared trunk and per-increment branches.
#[derive(Parser)]
#[command(name = "sharenet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base network on increment 0.
    TrainBase {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train the next increment at every candidate split and keep the selected one.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Learn one more increment as a new branch.
    Add {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        increment: usize,
    },
    /// Top-1 accuracy over every class learned so far, or one branch.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// `updated` or `branch <k>`
        #[arg(long, default_value = "updated")]
        scope: String,
    },
    /// Analytic training cost with and without sharing.
    Cost {
        #[arg(long)]
        config: PathBuf,
        /// Target shared fraction in [0, 1).
        #[arg(long)]
        sharing: Option<f64>,
        /// `topology`, `resnet101` or `resnet34`
        #[arg(long)]
        network: Option<String>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainBase { config, model } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::train_base(&cfg, &commands::default_model_path(&cfg, model))
        }
        Command::Sweep { config, model } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::sweep(&cfg, &commands::default_model_path(&cfg, model))
        }
        Command::Add {
            config,
            model,
            increment,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::add(&cfg, &commands::default_model_path(&cfg, model), increment)
        }
        Command::Eval { config, model, scope } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::eval(&cfg, &commands::default_model_path(&cfg, model), &scope)
        }
        Command::Cost {
            config,
            sharing,
            network,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::cost(&cfg, network.as_deref(), sharing)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Topology(_) | Error::SplitMismatch { .. } => 2,
        Error::Data(_)
        | Error::Format(_)
        | Error::Io(_)
        | Error::UnknownLabel(_)
        | Error::ClassCollision(_)
        | Error::Shape(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
