//! Flag and config-file options, merged as flags > file > defaults.

use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args};
use kgrelpred::encoder::{ActivationKind, Aggregation, Mechanism};
use kgrelpred::graph::Split;
use kgrelpred::path_encoder::PathWeighting;
use kgrelpred::trainer::TrainConfig;
use serde::Deserialize;

/// Every option is optional here so that unset flags fall through to the
/// config file. Config-file keys are the flag names without dashes.
#[derive(Args, Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Options {
    /// Dataset directory with train.txt, valid.txt and test.txt.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (train, ablate) or report file (evaluate).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file with flat keys named like the flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Comma list of local, global, random.
    #[arg(long)]
    pub attention: Option<String>,
    #[arg(long, action = ArgAction::Set)]
    pub use_paths: Option<bool>,
    /// Entity context hops per iteration.
    #[arg(long)]
    pub hops: Option<usize>,
    /// Outer message-passing iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub path_len: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub p_random: Option<f64>,
    #[arg(long)]
    pub neighbor_cap: Option<usize>,
    /// sum or mean over incident edge states.
    #[arg(long)]
    pub aggregation: Option<String>,
    /// counts, frequency or unit.
    #[arg(long)]
    pub path_weighting: Option<String>,
    /// relu or sigmoid.
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed range `A..B`, inclusive.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// train, valid or test.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Confusion-matrix CSV destination.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long)]
    pub tail: Option<String>,
    #[arg(long)]
    pub topk: Option<usize>,
    /// Also sweep hops and path length over {1,2,3}.
    #[arg(long, action = ArgAction::Set)]
    pub grid: Option<bool>,
}

macro_rules! merge_fields {
    ($flags:expr, $file:expr; $($f:ident),*) => {
        Options { $($f: $flags.$f.or($file.$f),)* }
    };
}

impl Options {
    /// Flags win over file values.
    pub fn merge(self, file: Options) -> Options {
        merge_fields!(self, file; data, out, config, attention, use_paths, hops, iterations,
            path_len, dim, lr, l2, batch, epochs, p_random, neighbor_cap, aggregation,
            path_weighting, activation, seed, seeds, workers, split, checkpoint, confusion,
            head, tail, topk, grid)
    }

    pub fn from_toml(text: &str) -> Result<Options> {
        toml::from_str(text).context("parsing config file")
    }

    /// Reads `--config` if given and merges it under the flags.
    pub fn resolve(self) -> Result<Options> {
        match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                Ok(self.merge(Options::from_toml(&text)?))
            }
            None => Ok(self),
        }
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data.as_deref().context("--data is required")
    }

    pub fn mechanisms(&self) -> Result<Option<Vec<Mechanism>>> {
        self.attention
            .as_deref()
            .map(|s| Mechanism::parse_list(s).map_err(Into::into))
            .transpose()
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        let enc = &mut cfg.model.encoder;
        if let Some(m) = self.mechanisms()? {
            enc.mechanisms = m;
        }
        set(&mut enc.hops, self.hops);
        set(&mut enc.iterations, self.iterations);
        set(&mut enc.dim, self.dim);
        set(&mut enc.p_random, self.p_random);
        if self.neighbor_cap.is_some() {
            enc.neighbor_cap = self.neighbor_cap;
        }
        if let Some(a) = &self.aggregation {
            enc.aggregation = a.parse::<Aggregation>()?;
        }
        if let Some(a) = &self.activation {
            enc.activation = match a.as_str() {
                "relu" => ActivationKind::Relu,
                "sigmoid" => ActivationKind::Sigmoid,
                other => bail!("unknown activation `{other}`"),
            };
        }
        set(&mut cfg.model.use_paths, self.use_paths);
        set(&mut cfg.model.path_len, self.path_len);
        if let Some(w) = &self.path_weighting {
            cfg.model.path_weighting = w.parse::<PathWeighting>()?;
        }
        set(&mut cfg.learning_rate, self.lr);
        set(&mut cfg.l2_weight, self.l2);
        set(&mut cfg.batch_size, self.batch);
        set(&mut cfg.epochs, self.epochs);
        set(&mut cfg.seed, self.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// `--seeds` if given, else the single `--seed` (default 1).
    pub fn seed_list(&self) -> Result<Vec<u64>> {
        match &self.seeds {
            Some(s) => Ok(parse_seed_range(s)?.collect()),
            None => Ok(vec![self.seed.unwrap_or(1)]),
        }
    }

    pub fn split(&self, default: Split) -> Result<Split> {
        match &self.split {
            Some(s) => Ok(s.parse()?),
            None => Ok(default),
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn parse_seed_range(s: &str) -> Result<RangeInclusive<u64>> {
    let Some((a, b)) = s.split_once("..") else {
        bail!("seed range `{s}` must look like A..B");
    };
    let (a, b): (u64, u64) = (
        a.trim().parse().context("seed range start")?,
        b.trim().parse().context("seed range end")?,
    );
    if a > b {
        bail!("empty seed range `{s}`");
    }
    Ok(a..=b)
}
