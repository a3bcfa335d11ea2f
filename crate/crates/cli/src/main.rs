use clap::{Parser, Subcommand};
use denoise_cli::config::{CliOverrides, Experiment};
use std::path::PathBuf;
use std::process::ExitCode;

/// Denoising-with-attention experiment runner. Each subcommand resolves a
/// JSON config against its defaults, runs, and writes CSVs plus a manifest.
#[derive(Debug, Parser)]
#[command(name = "denoise", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config file; omitted fields use experiment defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides config and DENOISE_OUT).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Comma-separated seed list, e.g. --seed 0,1,2.
    #[arg(long, global = true, value_delimiter = ',', value_name = "S[,S...]")]
    seed: Option<Vec<u64>>,

    /// Override one config entry, e.g. --set train.epochs=200. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Evaluate analytic weights instead of training (context-sweep only).
    #[arg(long, global = true)]
    ideal: bool,
}

/// One subcommand per experiment.
#[derive(Debug, Subcommand)]
enum Command {
    /// Training curves, final weights, and baselines for one task.
    Train,
    /// MSE against context length, trained or analytic weights.
    ContextSweep,
    /// Frozen trained weights on tasks of other subspace dimensions.
    DimShift,
    /// MSE over a grid of scaled-identity weights.
    Landscape,
    /// Training on coordinate-changed prompts and inverse recovery.
    Transform,
    /// Monte-Carlo checks of the concentration bounds.
    Rates,
    /// Energy descent from the query: one step versus many.
    EnergyDemo,
    /// Reference predictor table for one task.
    BaselineEval,
}

impl Command {
    fn experiment(&self) -> Experiment {
        match self {
            Command::Train => Experiment::Train,
            Command::ContextSweep => Experiment::ContextSweep,
            Command::DimShift => Experiment::DimShift,
            Command::Landscape => Experiment::Landscape,
            Command::Transform => Experiment::Transform,
            Command::Rates => Experiment::Rates,
            Command::EnergyDemo => Experiment::EnergyDemo,
            Command::BaselineEval => Experiment::BaselineEval,
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<PathBuf> {
    let overrides = CliOverrides {
        seeds: cli.seed.clone(),
        ideal: cli.ideal,
        out_dir: cli.out.as_ref().map(|p| p.display().to_string()),
    };
    let cfg = denoise_cli::load_config(
        cli.command.experiment(),
        cli.config.as_deref(),
        &cli.set,
        &overrides,
    )?;
    denoise_cli::run_experiment(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_default_env()
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            // One machine-readable line on stderr.
            let line = serde_json::json!({ "error": format!("{err:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
