//! Prototype learning over frozen `[MASK]` embeddings.
//!
//! A linear [`ProjectionEncoder`] maps raw hidden states into prototype space;
//! one prototype per class is learned jointly with it by minimising the sum of
//! an instance-instance and an instance-prototype contrastive loss, both
//! built on cosine similarity.

mod adam;
mod checkpoint;
mod loss;
mod similarity;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, checkpoint_to_string, Checkpoint, CheckpointHeader};
pub use loss::{
    instance_instance_loss, instance_prototype_loss, loss_gradients, total_loss, Gradients,
    LossBreakdown, LossVariant,
};
pub use similarity::{cosine_gradient, cosine_similarity};
pub use train::{train, train_groups, train_groups_named, LossRecord, TrainConfig, TrainResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

pub const DEFAULT_PROTO_DIM: usize = 128;

/// Linear map from raw embedding space (`D`) to prototype space (`d_proto`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionEncoder {
    weight: Matrix,
}

impl ProjectionEncoder {
    pub fn new(weight: Matrix) -> Result<Self> {
        if weight.rows() == 0 || weight.cols() == 0 {
            return Err(Error::InvalidArgument("encoder weight must be non-empty".into()));
        }
        if weight.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("encoder weight".into()));
        }
        Ok(Self { weight })
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn proto_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn project(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "projection input".into(),
                expected: self.input_dim(),
                actual: h.len(),
            });
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("projection input".into()));
        }
        Ok(self.weight.matvec(h))
    }

    pub fn project_groups(&self, groups: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<Vec<f64>>>> {
        groups
            .iter()
            .map(|g| g.iter().map(|h| self.project(h)).collect())
            .collect()
    }
}

/// One prototype vector per class, each with strictly positive norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    prototypes: Vec<Vec<f64>>,
}

impl PrototypeSet {
    pub fn new(prototypes: Vec<Vec<f64>>) -> Result<Self> {
        let dim = match prototypes.first() {
            Some(p) => p.len(),
            None => return Err(Error::Empty("prototype set".into())),
        };
        for (n, p) in prototypes.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("prototype {n}"),
                    expected: dim,
                    actual: p.len(),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("prototype {n}")));
            }
            if norm(p) <= 0.0 {
                return Err(Error::ZeroNorm(format!("prototype {n}")));
            }
        }
        Ok(Self { prototypes })
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].len()
    }

    pub fn get(&self, n: usize) -> &[f64] {
        &self.prototypes[n]
    }

    pub fn as_slice(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    /// Cosine similarity of `v` to every prototype.
    pub fn similarities(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.prototypes
            .iter()
            .map(|c| cosine_similarity(v, c))
            .collect()
    }
}
