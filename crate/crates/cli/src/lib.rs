//! Experiment runner for the in-context denoising library: resolves a JSON
//! config, executes one experiment, and stamps CSV artifacts plus a manifest
//! into the output directory.
//!
//! Every run is a pure function of (config, seeds): the same resolved config
//! reproduces byte-identical CSV tables.

use anyhow::{Context, Result};
use std::fs;
use std::path::{Path, PathBuf};

pub mod artifacts;
pub mod config;
pub mod experiments;

use artifacts::RunWriter;
use config::{CliOverrides, Experiment, RawConfig, ResolvedConfig};

/// Loads the config file (if any), applies `--set` overrides, and resolves
/// everything against `experiment`'s defaults.
pub fn load_config(
    experiment: Experiment,
    config_path: Option<&Path>,
    sets: &[String],
    overrides: &CliOverrides,
) -> Result<ResolvedConfig> {
    let text = match config_path {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("reading config {}", p.display()))?,
        None => "{}".to_string(),
    };
    let mut tree: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| "config is not valid JSON")?;
    for pair in sets {
        config::apply_set(&mut tree, pair)?;
    }
    let raw: RawConfig = config::parse_raw(&serde_json::to_string(&tree)?)?;
    config::resolve(experiment, &raw, overrides)
}

/// Runs one experiment end to end and returns the output directory.
pub fn run_experiment(cfg: &ResolvedConfig) -> Result<PathBuf> {
    let mut writer = RunWriter::create(Path::new(&cfg.out_dir))?;
    writer.write_json("resolved_config.json", cfg)?;
    experiments::run(cfg, &mut writer)?;
    writer.finish(cfg.experiment.name(), &cfg.seeds)
}
