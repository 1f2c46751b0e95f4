//! Command-line driver: dataset generation, training, evaluation, ablation
//! sweeps and attention dumps.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use scape_core::Error;

pub use config::{PredictorKind, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("training diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => 2,
            CliError::Diverged { .. } | CliError::Core(Error::NonFinite(_)) => 4,
            CliError::Core(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

#[derive(Debug, Parser)]
#[command(name = "scape", about = "Category-agnostic keypoint localization at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// Flat key=value config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub variant: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a dataset manifest
    Gen {
        #[arg(long)]
        categories: Option<usize>,
        /// Also export this many rendered instances per category
        #[arg(long, default_value_t = 0)]
        export: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Episodic training; writes a checkpoint and loss log
    Train {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint (or a reference predictor) on a split
    Eval {
        #[arg(long)]
        n_shot: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        split: Option<String>,
        /// model, oracle or center
        #[arg(long)]
        predictor: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate a grid of variants over paired seeds
    Ablate {
        /// Comma-separated variant names
        #[arg(long)]
        variants: Option<String>,
        /// Comma-separated seeds
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write attention maps for one episode
    DumpAttention {
        #[arg(long)]
        episode_seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
}

/// Loads the config file, then applies `--set` pairs, then dedicated flags.
fn resolve(common: &Common, flags: &[(&str, Option<String>)], seed_key: &str) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for pair in &common.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{pair}'")))?;
        cfg.set(k, v)?;
    }
    let mut all: Vec<(&str, Option<String>)> = vec![
        ("path.out_dir", common.out_dir.as_ref().map(|p| p.display().to_string())),
        ("path.manifest", common.manifest.as_ref().map(|p| p.display().to_string())),
        ("path.checkpoint", common.checkpoint.as_ref().map(|p| p.display().to_string())),
        (seed_key, common.seed.map(|s| s.to_string())),
        ("model.variant", common.variant.clone()),
    ];
    all.extend(flags.iter().cloned());
    for (k, v) in all {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen {
            categories,
            export,
            common,
        } => {
            let cfg = resolve(&common, &[("data.categories", s(&categories))], "data.seed")?;
            commands::gen(&cfg, export)
        }
        Command::Train {
            steps,
            epochs,
            batch_size,
            lr,
            common,
        } => {
            let flags = [
                ("train.steps", s(&steps)),
                ("train.epochs", s(&epochs)),
                ("train.batch_size", s(&batch_size)),
                ("train.lr", s(&lr)),
            ];
            commands::train(&resolve(&common, &flags, "train.seed")?)
        }
        Command::Eval {
            n_shot,
            episodes,
            split,
            predictor,
            common,
        } => {
            let flags = [
                ("eval.n_shot", s(&n_shot)),
                ("eval.episodes", s(&episodes)),
                ("eval.split", split),
                ("eval.predictor", predictor),
            ];
            commands::eval(&resolve(&common, &flags, "eval.seed")?)
        }
        Command::Ablate {
            variants,
            seeds,
            steps,
            common,
        } => {
            let flags = [
                ("ablate.variants", variants),
                ("ablate.seeds", seeds),
                ("ablate.steps", s(&steps)),
            ];
            commands::ablate(&resolve(&common, &flags, "eval.seed")?)
        }
        Command::DumpAttention { episode_seed, common } => {
            let cfg = resolve(&common, &[("dump.episode_seed", s(&episode_seed))], "dump.episode_seed")?;
            commands::dump_attention(&cfg)
        }
    }
}
