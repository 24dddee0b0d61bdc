//! N-way K-shot episodes drawn from the train split, with optional label noise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportEntry {
    /// Index into `EmbeddingDataset::records`.
    pub record: usize,
    pub id: String,
    /// Current (possibly corrupted) label.
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub num_corrupted: usize,
    pub corruption_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    pub seed: u64,
    /// Support records grouped by their original class; `support[c]` always
    /// has exactly `k_shot` entries.
    pub support: Vec<Vec<SupportEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    pub original_labels: BTreeMap<String, usize>,
}

impl Episode {
    /// Support entries in class-major order.
    pub fn entries(&self) -> impl Iterator<Item = &SupportEntry> {
        self.support.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.n_way * self.k_shot
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of entries whose current label differs from the original.
    pub fn num_flipped(&self) -> usize {
        self.entries()
            .filter(|e| self.original_labels[&e.id] != e.label)
            .count()
    }

    /// Raw embeddings grouped by current label.
    pub fn grouped_embeddings(&self, dataset: &EmbeddingDataset) -> Vec<Vec<Vec<f64>>> {
        let mut groups = vec![Vec::new(); self.n_way];
        for e in self.entries() {
            groups[e.label].push(dataset.records[e.record].embedding_f64());
        }
        groups
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("episode serializes")
    }
}

/// Draws `k_shot` distinct train records from every class.
///
/// One ChaCha8 stream keyed by `seed` is consumed class by class in index
/// order; within a class the candidates (train records in file order) are
/// partially Fisher-Yates shuffled and the first `k_shot` kept.
pub fn sample_episode(
    dataset: &EmbeddingDataset,
    n_way: usize,
    k_shot: usize,
    seed: u64,
) -> Result<Episode> {
    if n_way != dataset.n_classes() {
        return Err(Error::InvalidArgument(format!(
            "n_way {n_way} does not match the dataset's {} classes",
            dataset.n_classes()
        )));
    }
    if k_shot == 0 {
        return Err(Error::InvalidArgument("k_shot must be at least 1".into()));
    }
    let by_class = dataset.train_indices_by_class();
    for (class, idx) in by_class.iter().enumerate() {
        if idx.len() < k_shot {
            return Err(Error::InsufficientRecords {
                class,
                available: idx.len(),
                required: k_shot,
            });
        }
    }

    let mut rng = SeededRng::for_stream(seed, Stream::Episode);
    let mut support = Vec::with_capacity(n_way);
    let mut original_labels = BTreeMap::new();
    for (class, mut idx) in by_class.into_iter().enumerate() {
        rng.shuffle_prefix(&mut idx, k_shot);
        let entries: Vec<SupportEntry> = idx[..k_shot]
            .iter()
            .map(|&record| SupportEntry {
                record,
                id: dataset.records[record].id.clone(),
                label: class,
            })
            .collect();
        for e in &entries {
            original_labels.insert(e.id.clone(), class);
        }
        support.push(entries);
    }

    Ok(Episode {
        n_way,
        k_shot,
        seed,
        support,
        noise: None,
        original_labels,
    })
}

/// Relabels exactly `m` support records with a wrong class.
///
/// Corruption always starts from the original labels, so applying it to an
/// already-noisy episode replaces the earlier noise. Positions are the first
/// `m` of a Fisher-Yates pass over the class-major entry list; each new label
/// is uniform over the `n_way - 1` other classes.
pub fn inject_noise(episode: &Episode, m: usize, corruption_seed: u64) -> Result<Episode> {
    let total = episode.len();
    if m > total {
        return Err(Error::InvalidArgument(format!(
            "cannot corrupt {m} of {total} support records"
        )));
    }
    if m > 0 && episode.n_way < 2 {
        return Err(Error::InvalidArgument(
            "label noise needs at least two classes".into(),
        ));
    }

    let mut out = episode.clone();
    for e in out.support.iter_mut().flatten() {
        e.label = out.original_labels[&e.id];
    }
    if m == 0 {
        out.noise = None;
        return Ok(out);
    }

    let mut rng = SeededRng::for_stream(corruption_seed, Stream::Corruption);
    let mut positions: Vec<usize> = (0..total).collect();
    rng.shuffle_prefix(&mut positions, m);
    let k = out.k_shot;
    for &pos in &positions[..m] {
        let entry = &mut out.support[pos / k][pos % k];
        let original = entry.label;
        let r = rng.below((out.n_way - 1) as u64) as usize;
        entry.label = if r >= original { r + 1 } else { r };
    }
    out.noise = Some(NoiseSpec {
        num_corrupted: m,
        corruption_seed,
    });
    Ok(out)
}
