use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingRecord;
use crate::error::{Error, Result};
use crate::proto::{cosine_similarity, TrainResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub token: String,
    pub score: f64,
}

/// Per class, probe tokens ranked by cosine similarity to the class prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub top_k: usize,
    pub classes: Vec<Vec<ProbeEntry>>,
}

/// Projects each probe embedding and ranks the tokens against every
/// prototype: score descending, then token ascending.
pub fn probe_vocabulary(result: &TrainResult, probes: &[&EmbeddingRecord], top_k: usize) -> Result<ProbeReport> {
    if probes.is_empty() {
        return Err(Error::Empty("probe set".into()));
    }
    let mut projected = Vec::with_capacity(probes.len());
    for r in probes {
        let token = r
            .token
            .clone()
            .ok_or_else(|| Error::InvalidArgument(format!("probe record {} has no token", r.id)))?;
        projected.push((token, result.encoder.project(&r.embedding_f64())?));
    }
    let classes = result
        .prototypes
        .as_slice()
        .iter()
        .map(|c| {
            let mut ranked: Vec<ProbeEntry> = projected
                .iter()
                .map(|(token, v)| {
                    Ok(ProbeEntry {
                        token: token.clone(),
                        score: cosine_similarity(v, c)?,
                    })
                })
                .collect::<Result<_>>()?;
            ranked.sort_by(|a, b| match b.score.total_cmp(&a.score) {
                Ordering::Equal => a.token.cmp(&b.token),
                o => o,
            });
            ranked.truncate(top_k);
            Ok(ranked)
        })
        .collect::<Result<_>>()?;
    Ok(ProbeReport { top_k, classes })
}
