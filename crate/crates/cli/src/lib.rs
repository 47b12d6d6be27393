//! `srgt` subcommands. Every command layers `--config FILE`, then `--set key=value`,
//! then its explicit flags, and writes the resolved configuration next to its outputs.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use srgt_core::config::KvConfig;
use srgt_core::error::{Error, FormatError, Result};

mod commands;

pub use commands::{checkpoint_manifest, save_checkpoint, CHECKPOINT_FILE, DATASET_MANIFEST, TEST_FILE, TRAINVAL_FILE};

#[derive(Debug, Parser)]
#[command(name = "srgt", version, about = "Super-resolution of p=1 spectral-element fields to p=3")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic detonation snapshot series.
    Gen(GenArgs),
    /// Cluster, sample and tokenize a snapshot series into datasets.
    BuildDataset(BuildArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out snapshots.
    Eval(EvalArgs),
    /// Evaluate the KNN interpolation baseline on the held-out snapshots.
    Baseline(BaselineArgs),
    /// Super-resolve one snapshot file.
    Infer(InferArgs),
}

#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// key = value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub nex: Option<usize>,
    #[arg(long)]
    pub ney: Option<usize>,
    #[arg(long)]
    pub lx: Option<f64>,
    #[arg(long)]
    pub ly: Option<f64>,
    #[arg(long)]
    pub snapshots: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Directory of fine snapshots.
    #[arg(long)]
    pub snapshots: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Number of k-means clusters.
    #[arg(long)]
    pub k: Option<usize>,
    /// Neighbors per query element.
    #[arg(long = "K")]
    pub k_neighbors: Option<usize>,
    #[arg(long)]
    pub per_cluster: Option<usize>,
    /// Train fraction of the train/validation split.
    #[arg(long)]
    pub split: Option<f64>,
    /// Trailing fraction of the series held out for testing.
    #[arg(long)]
    pub test_frac: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Output directory of build-dataset.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub n_latent: Option<usize>,
    #[arg(long)]
    pub n_blocks: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_peak: Option<f64>,
    #[arg(long)]
    pub lr_final: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub val_interval: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub dataset: Option<String>,
    /// Snapshot directory; defaults to the one recorded by build-dataset.
    #[arg(long)]
    pub snapshots: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub images: Option<bool>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub snapshots: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long = "K")]
    pub k_neighbors: Option<usize>,
    #[arg(long)]
    pub images: Option<bool>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Coarse (p=1) or fine (p=3, coarsened first) snapshot.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub output: Option<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::BuildDataset(a) => commands::build_dataset(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Infer(a) => commands::infer(&a),
    }
}

/// 2 for configuration and data-contract errors, 3 for I/O and file format, 4 for divergence.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence(_) => 4,
        Error::Io { .. } => 3,
        Error::Format(FormatError::ConfigMismatch(_)) => 2,
        Error::Format(_) => 3,
        _ => 2,
    }
}

/// Config file, then `--set` pairs, then `flags`.
pub(crate) fn layered(args: &ConfigArgs, flags: KvConfig) -> Result<KvConfig> {
    let mut c = match &args.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::new(),
    };
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {s:?}")))?;
        c.set(k.trim(), v.trim());
    }
    c.merge(&flags);
    Ok(c)
}

pub(crate) fn flag<T: Display>(c: &mut KvConfig, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        c.set(key, v);
    }
}

/// Rejects input keys the command does not understand.
pub(crate) fn reject_unknown(input: &KvConfig, resolved: &KvConfig) -> Result<()> {
    let unknown: Vec<&str> = input.iter().map(|(k, _)| k).filter(|k| !resolved.contains(k)).collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))))
    }
}

pub(crate) fn require_path(c: &KvConfig, key: &str) -> Result<PathBuf> {
    c.get_str(key)
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("missing --{key}")))
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
