//! Pipeline driver for `bayestrans-core`: configuration files, plain-text
//! data and model formats, and the `bayestrans` command line.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "bayestrans",
    version,
    about = "Bayesian translational relation scoring for event temporal relations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train graph link prediction and write the prior file.
    PriorTrain(CommonArgs),
    /// Train a model and write its checkpoint and dev metrics.
    Train(CommonArgs),
    /// Evaluate a checkpoint on a split.
    Eval(EvalArgs),
    /// Write per-instance labels and predictive distributions.
    Predict(SplitArgs),
    /// Monte Carlo uncertainty and simplex export.
    Uncertainty(UncertaintyArgs),
    /// Per-dimension activity of the posterior-mean relation parameters.
    Activity(SplitArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML configuration file (a run manifest also works).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a configuration value, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, value_parser = ["transe", "mure", "murp", "atth"])]
    pub scorer: Option<String>,
    #[arg(long, value_parser = ["file", "standard"])]
    pub prior: Option<String>,
}

impl CommonArgs {
    /// `--set` values followed by the dedicated flags.
    pub fn all_overrides(&self) -> Vec<String> {
        let mut all = self.overrides.clone();
        if let Some(s) = self.seed {
            all.push(format!("seed={s}"));
        }
        if let Some(s) = &self.scorer {
            all.push(format!("model.scorer={s}"));
        }
        if let Some(p) = &self.prior {
            all.push(format!("prior.source={p}"));
        }
        all
    }
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint file; defaults to `<out>/checkpoint.txt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// train, dev or test; defaults to `eval.split`.
    #[arg(long)]
    pub split: Option<String>,
    /// Dataset file read instead of the split's configured path.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_parser = ["matres", "micro"])]
    pub convention: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct UncertaintyArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    /// Forward passes per instance; defaults to `analysis.passes`.
    #[arg(long)]
    pub passes: Option<usize>,
}

/// Runs one command and returns the paths it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    match &cli.command {
        Command::PriorTrain(a) => commands::prior_train(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Uncertainty(a) => commands::uncertainty(a),
        Command::Activity(a) => commands::activity(a),
    }
}
