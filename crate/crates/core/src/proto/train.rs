use serde::{Deserialize, Serialize};

use super::{adam_step, loss_gradients, AdamConfig, AdamState, LossBreakdown, LossVariant};
use super::{PrototypeSet, ProjectionEncoder, DEFAULT_PROTO_DIM};
use crate::dataset::EmbeddingDataset;
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::linalg::{mean_vector, Matrix};
use crate::rng::{SeededRng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss_variant: LossVariant,
    pub adam: AdamConfig,
    pub init_scale: f64,
    pub proto_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 0.01,
            seed: 0,
            loss_variant: LossVariant::Full,
            adam: AdamConfig::default(),
            init_scale: 1.0,
            proto_dim: DEFAULT_PROTO_DIM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidArgument("init_scale must be positive".into()));
        }
        if self.proto_dim == 0 {
            return Err(Error::InvalidArgument("proto_dim must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub l_ins: f64,
    pub l_proto: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub encoder: ProjectionEncoder,
    pub prototypes: PrototypeSet,
    /// Loss evaluated before each update, one entry per step.
    pub loss_trace: Vec<LossRecord>,
}

/// Trains on an episode's support set, grouped by current label.
pub fn train(dataset: &EmbeddingDataset, episode: &Episode, config: &TrainConfig) -> Result<TrainResult> {
    if episode.n_way != dataset.n_classes() {
        return Err(Error::DimensionMismatch {
            context: "episode classes vs dataset classes".into(),
            expected: dataset.n_classes(),
            actual: episode.n_way,
        });
    }
    train_groups_named(
        &episode.grouped_embeddings(dataset),
        &dataset.header.class_names,
        dataset.dim(),
        config,
    )
}

/// Seeded initialisation, every entry uniform in `[-s, s)` with
/// `s = init_scale / sqrt(dim)`. The encoder weight (row-major) comes from one
/// stream; each prototype from a stream keyed by its class name, so relabelling
/// classes permutes the initial prototypes with them.
fn initialise(class_keys: &[String], dim: usize, config: &TrainConfig) -> (Matrix, Vec<Vec<f64>>) {
    let mut rng = SeededRng::for_stream(config.seed, Stream::Init);
    let scale = config.init_scale / (dim as f64).sqrt();
    let mut weight = Matrix::zeros(config.proto_dim, dim);
    for x in weight.as_mut_slice() {
        *x = rng.symmetric(scale);
    }
    let protos = class_keys
        .iter()
        .map(|key| {
            let mut rng = SeededRng::keyed(config.seed, Stream::PrototypeInit, key);
            (0..config.proto_dim).map(|_| rng.symmetric(scale)).collect()
        })
        .collect();
    (weight, protos)
}

/// Trains from raw embeddings grouped by class; classes are keyed by index.
pub fn train_groups(raw: &[Vec<Vec<f64>>], dim: usize, config: &TrainConfig) -> Result<TrainResult> {
    let keys: Vec<String> = (0..raw.len()).map(|i| i.to_string()).collect();
    train_groups_named(raw, &keys, dim, config)
}

/// Trains from raw embeddings grouped by class; `raw[c]` may be empty and
/// `class_keys[c]` seeds the initial prototype of class `c`.
pub fn train_groups_named(
    raw: &[Vec<Vec<f64>>],
    class_keys: &[String],
    dim: usize,
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate()?;
    if raw.len() != class_keys.len() {
        return Err(Error::DimensionMismatch {
            context: "class keys".into(),
            expected: raw.len(),
            actual: class_keys.len(),
        });
    }
    if raw.is_empty() {
        return Err(Error::Empty("training needs at least one class".into()));
    }
    if raw.iter().all(Vec::is_empty) {
        return Err(Error::Empty("training needs at least one instance".into()));
    }
    let (weight, mut protos) = initialise(class_keys, dim, config);
    let mut encoder = ProjectionEncoder::new(weight)?;

    if config.loss_variant == LossVariant::InstanceMean {
        for (c, group) in raw.iter().enumerate() {
            let projected: Vec<Vec<f64>> = group
                .iter()
                .map(|h| encoder.project(h))
                .collect::<Result<_>>()?;
            if let Some(mean) = mean_vector(&projected) {
                protos[c] = mean;
            }
        }
        return Ok(TrainResult {
            encoder,
            prototypes: PrototypeSet::new(protos)?,
            loss_trace: Vec::new(),
        });
    }

    let w_len = config.proto_dim * dim;
    let mut params: Vec<f64> = encoder.weight().as_slice().to_vec();
    params.extend(protos.iter().flatten());
    let mut state = AdamState::new(params.len());
    let mut grads = vec![0.0; params.len()];
    let mut trace = Vec::with_capacity(config.steps);

    let mut prototypes = PrototypeSet::new(protos)?;
    for step in 0..config.steps {
        let (loss, g) = loss_gradients(raw, &encoder, &prototypes, config.loss_variant)?;
        check_finite(&loss, step)?;
        trace.push(LossRecord {
            step,
            l_ins: loss.l_ins,
            l_proto: loss.l_proto,
            total: loss.total,
        });
        grads[..w_len].copy_from_slice(g.weight.as_slice());
        for (dst, src) in grads[w_len..].chunks_mut(config.proto_dim).zip(&g.prototypes) {
            dst.copy_from_slice(src);
        }
        adam_step(&mut params, &grads, &mut state, config.learning_rate, &config.adam)?;

        let mut weight = Matrix::zeros(config.proto_dim, dim);
        weight.as_mut_slice().copy_from_slice(&params[..w_len]);
        encoder = ProjectionEncoder::new(weight)?;
        prototypes = PrototypeSet::new(
            params[w_len..]
                .chunks(config.proto_dim)
                .map(<[f64]>::to_vec)
                .collect(),
        )?;
    }

    Ok(TrainResult {
        encoder,
        prototypes,
        loss_trace: trace,
    })
}

fn check_finite(loss: &LossBreakdown, step: usize) -> Result<()> {
    if loss.total.is_finite() && loss.l_ins.is_finite() && loss.l_proto.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("loss at step {step}")))
    }
}
