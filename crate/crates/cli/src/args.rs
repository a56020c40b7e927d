//! Flag definitions and config-file merging.
//!
//! Every value flag is optional at parse time; resolution order is
//! CLI flag, then `--config` file (key=value lines keyed by the long flag
//! name), then the module default.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sdd_core::dataset::GeneratorConfig;
use sdd_core::trainer::TrainConfig;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Parser, Debug)]
#[command(
    name = "sdd",
    version,
    about = "Noise-robust cross-modal matching on paired embeddings",
    disable_help_subcommand = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic paired-embedding dataset
    Generate(GenerateArgs),
    /// Robust training with self-drop and dual weights
    Train(TrainArgs),
    /// Vanilla fine-tuning on every pair
    Baseline(TrainArgs),
    /// Baseline over a random subset (drop ablation)
    DropAblation(DropArgs),
    /// Evaluate a checkpoint on a clean dataset
    Eval(EvalArgs),
    /// Train and evaluate robust vs baseline across noise ratios
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Default)]
pub struct GeneratorFlags {
    #[arg(long)]
    pub n_pairs: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub d_img: Option<usize>,
    #[arg(long)]
    pub d_txt: Option<usize>,
    #[arg(long)]
    pub clean_noise_std: Option<f64>,
    #[arg(long)]
    pub noise_ratio: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct TrainerFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub gen: GeneratorFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset file
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Input dataset file
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub train: TrainerFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DropArgs {
    #[command(flatten)]
    pub base: TrainArgs,
    /// Fraction of pairs to drop uniformly at random, in [0, 1)
    #[arg(long)]
    pub drop_ratio: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint produced by a training command
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Clean dataset to evaluate on
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory (metrics also echo to stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Comma-separated noise ratios, e.g. 0.2,0.4,0.6
    #[arg(long)]
    pub noise_ratios: Option<String>,
    #[command(flatten)]
    pub gen: GeneratorFlags,
    #[command(flatten)]
    pub train: TrainerFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

const KNOWN_KEYS: &[&str] = &[
    "n-pairs",
    "latent-dim",
    "d-img",
    "d-txt",
    "clean-noise-std",
    "noise-ratio",
    "seed",
    "epochs",
    "batch-size",
    "alpha",
    "beta",
    "lr",
    "weight-decay",
    "drop-ratio",
    "noise-ratios",
    "dataset",
    "checkpoint",
    "out",
];

/// Key=value lines from a `--config` file, validated against the flag names.
pub struct ConfigFile {
    map: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn empty() -> Self {
        ConfigFile {
            map: BTreeMap::new(),
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::empty());
        };
        let content = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut map = BTreeMap::new();
        for (no, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "config {} line {}: expected key=value",
                    path.display(),
                    no + 1
                );
            };
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                bail!(
                    "config {} line {}: unknown key {key:?}",
                    path.display(),
                    no + 1
                );
            }
            map.insert(key.to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { map })
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| anyhow::anyhow!("config key {key}: invalid value {raw:?}")),
        }
    }

    /// Flag wins over file; file wins over default.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.parse(key)?.unwrap_or(default)),
        }
    }

    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.parse(key),
        }
    }
}

/// Resolve generator flags to a full config.
pub fn resolve_generator(
    flags: &GeneratorFlags,
    seed: Option<u64>,
    file: &ConfigFile,
) -> Result<GeneratorConfig> {
    let defaults = GeneratorConfig::default();
    Ok(GeneratorConfig {
        n_pairs: file.pick(flags.n_pairs, "n-pairs", defaults.n_pairs)?,
        latent_dim: file.pick(flags.latent_dim, "latent-dim", defaults.latent_dim)?,
        d_img: file.pick(flags.d_img, "d-img", defaults.d_img)?,
        d_txt: file.pick(flags.d_txt, "d-txt", defaults.d_txt)?,
        clean_noise_std: file.pick(
            flags.clean_noise_std,
            "clean-noise-std",
            defaults.clean_noise_std,
        )?,
        noise_ratio: file.pick(flags.noise_ratio, "noise-ratio", defaults.noise_ratio)?,
        seed: file.pick(seed, "seed", defaults.seed)?,
    })
}

/// Resolve trainer flags to a full config.
pub fn resolve_trainer(
    flags: &TrainerFlags,
    seed: Option<u64>,
    file: &ConfigFile,
) -> Result<TrainConfig> {
    let defaults = TrainConfig::default();
    Ok(TrainConfig {
        epochs: file.pick(flags.epochs, "epochs", defaults.epochs)?,
        batch_size: file.pick(flags.batch_size, "batch-size", defaults.batch_size)?,
        alpha: file.pick(flags.alpha, "alpha", defaults.alpha)?,
        beta: file.pick(flags.beta, "beta", defaults.beta)?,
        learning_rate: file.pick(flags.lr, "lr", defaults.learning_rate)?,
        weight_decay: file.pick(flags.weight_decay, "weight-decay", defaults.weight_decay)?,
        seed: file.pick(seed, "seed", defaults.seed)?,
        shuffle: true,
    })
}

pub fn parse_ratio_list(raw: &str) -> Result<Vec<f64>> {
    let ratios: Vec<f64> = raw
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| anyhow::anyhow!("invalid noise ratio {t:?}"))
        })
        .collect::<Result<_>>()?;
    if ratios.is_empty() {
        bail!("noise-ratios list is empty");
    }
    for &r in &ratios {
        if !(0.0..=1.0).contains(&r) {
            bail!("noise ratio {r} outside [0, 1]");
        }
    }
    Ok(ratios)
}
