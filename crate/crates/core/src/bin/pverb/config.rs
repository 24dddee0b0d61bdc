//! Training/sampling settings: flags override the config file, which
//! overrides built-in defaults.

use std::path::Path;

use anyhow::{Context, Result};
use proto_verbalizer::proto::AdamConfig;
use proto_verbalizer::{LossVariant, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub n_way: Option<usize>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub noise: Option<usize>,
    pub noise_seed: Option<u64>,
    pub variant: Option<LossVariant>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub d_proto: Option<usize>,
    pub init_scale: Option<f64>,
    pub adam: Option<AdamConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

#[derive(Debug, Clone, clap::Args, Default)]
pub struct TrainFlags {
    /// Loss variant: full, proto_only or instance_mean.
    #[arg(long)]
    pub variant: Option<LossVariant>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Adam learning rate for the encoder and prototypes.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Prototype space dimension.
    #[arg(long)]
    pub d_proto: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// JSON config file; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
}

/// Effective settings of one run, echoed into manifests.
#[derive(Debug, Clone, Serialize)]
pub struct Effective {
    pub n_way: Option<usize>,
    pub k: usize,
    pub seed: u64,
    pub noise: usize,
    pub noise_seed: u64,
    pub train: TrainConfig,
}

pub fn train_config(flags: &TrainFlags, file: &FileConfig, seed: u64) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        steps: flags.steps.or(file.steps).unwrap_or(d.steps),
        learning_rate: flags.lr.or(file.lr).unwrap_or(d.learning_rate),
        seed,
        loss_variant: flags.variant.or(file.variant).unwrap_or(d.loss_variant),
        adam: file.adam.unwrap_or(d.adam),
        init_scale: flags.init_scale.or(file.init_scale).unwrap_or(d.init_scale),
        proto_dim: flags.d_proto.or(file.d_proto).unwrap_or(d.proto_dim),
    }
}
