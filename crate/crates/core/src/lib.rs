//! Prototype verbalizers for prompt-based few-shot classification.
//!
//! The crate consumes `[MASK]` hidden states exported from a masked language
//! model (see [`dataset`]), learns one prototype per class with a linear
//! projection and two contrastive losses ([`proto`]), and classifies queries
//! by cosine similarity to the prototypes, optionally ensembled with
//! label-word scores ([`scoring`]). [`analysis`] runs the experiment grids.

pub mod analysis;
pub mod dataset;
pub mod episode;
pub mod error;
pub mod linalg;
pub mod proto;
pub mod rng;
pub mod scoring;
pub mod synth;

pub use dataset::{load_dataset, write_dataset, DatasetHeader, EmbeddingDataset, EmbeddingRecord, Split};
pub use episode::{inject_noise, sample_episode, Episode};
pub use error::{Error, Result};
pub use proto::{train, LossVariant, PrototypeSet, ProjectionEncoder, TrainConfig, TrainResult};
pub use scoring::{evaluate, predict, standard_scale, ClassScores};
