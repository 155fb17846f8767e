//! `berrystack <command> --config <path> [--seed N] [--out DIR]`

mod commands;
pub mod config;
pub mod run_manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

pub use commands::Context;
pub use config::RunConfig;
pub use run_manifest::{write_atomic, RunManifest};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "berrystack", version, about = "Blackberry ripeness pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `paths.output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic bispectral set and a planted hyperspectral scene.
    Synth,
    /// Pick the visible and NIR wavelengths from a calibrated cube.
    SelectWavelengths,
    /// Build 32x32 samples and stratified train/val/test splits.
    Prepare,
    /// Train one two-branch model.
    Train,
    /// Coordinate-wise grid search with stratified k-fold.
    Tune,
    /// Train base learners and the stacking meta-learner.
    TrainEnsemble,
    /// Metrics, confusion matrix and ROC/PR points on the test split.
    Evaluate,
    /// Metrics on clean and augmented copies of the test split.
    Robustness,
    /// Pearson matrix and human-vs-machine comparison for a sensory table.
    Correlate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::SelectWavelengths => "select-wavelengths",
            Command::Prepare => "prepare",
            Command::Train => "train",
            Command::Tune => "tune",
            Command::TrainEnsemble => "train-ensemble",
            Command::Evaluate => "evaluate",
            Command::Robustness => "robustness",
            Command::Correlate => "correlate",
        }
    }
}

/// Parses arguments, runs one command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok((manifest, summary)) => {
            println!("{summary}");
            println!("{}: wrote {} files", manifest.command, manifest.outputs.len());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs the command and returns its run manifest and a short summary.
pub fn execute(cli: &Cli) -> Result<(RunManifest, String)> {
    let started = Instant::now();
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Argument("--config <path> is required".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        config.seed = Some(s);
    }
    if let Some(o) = &cli.out {
        config.paths.output_dir = Some(o.clone());
    }
    let seed = config
        .seed
        .ok_or_else(|| Error::Config("no seed: set `seed` in the config or pass --seed".into()))?;
    let out = config
        .paths
        .output_dir
        .clone()
        .unwrap_or_else(|| path.parent().unwrap_or(std::path::Path::new(".")).join("out"));
    let digest = config.digest()?;
    let ctx = Context { config, seed, out };
    let outcome = match cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::SelectWavelengths => commands::select_wavelengths_cmd(&ctx),
        Command::Prepare => commands::prepare(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Tune => commands::tune(&ctx),
        Command::TrainEnsemble => commands::train_ensemble_cmd(&ctx),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::Robustness => commands::robustness(&ctx),
        Command::Correlate => commands::correlate(&ctx),
    }
    .map_err(|e| e.context(cli.command.name()))?;
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        config_digest: digest,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        duration_seconds: started.elapsed().as_secs_f64(),
        outputs: outcome.outputs,
    };
    let path = ctx.out.join(format!("{}.run.json", cli.command.name()));
    run_manifest::write_run_manifest(&path, &manifest)?;
    Ok((manifest, outcome.summary))
}
