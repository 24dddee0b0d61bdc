use crate::dataset::{EmbeddingDataset, Split, Verbalizer};
use crate::error::{Error, Result};
use crate::linalg::{mean_vector, softmax};
use crate::proto::{cosine_similarity, TrainResult};

/// Row `i` is the softmax over classes `j` of the cosine similarity between
/// prototype `i` and the mean projected embedding of class `j`'s label words.
pub fn proto_manual_similarity(result: &TrainResult, word_embeddings: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let n = result.prototypes.len();
    if word_embeddings.len() != n {
        return Err(Error::DimensionMismatch {
            context: "label-word classes vs prototypes".into(),
            expected: n,
            actual: word_embeddings.len(),
        });
    }
    let mut centers = Vec::with_capacity(n);
    for (j, words) in word_embeddings.iter().enumerate() {
        let projected: Vec<Vec<f64>> = words.iter().map(|h| result.encoder.project(h)).collect::<Result<_>>()?;
        centers.push(
            mean_vector(&projected).ok_or_else(|| Error::Empty(format!("label words for class {j}")))?,
        );
    }
    result
        .prototypes
        .as_slice()
        .iter()
        .map(|c| {
            let sims: Vec<f64> = centers.iter().map(|m| cosine_similarity(c, m)).collect::<Result<_>>()?;
            Ok(softmax(&sims))
        })
        .collect()
}

/// Collects the probe embeddings of each class's label words, in class order.
pub fn label_word_embeddings(probes: &EmbeddingDataset, class_names: &[String], verbalizer: &Verbalizer) -> Result<Vec<Vec<Vec<f64>>>> {
    class_names
        .iter()
        .map(|name| {
            let words = verbalizer
                .get(name)
                .filter(|w| !w.is_empty())
                .ok_or_else(|| Error::Empty(format!("label words for class {name:?}")))?;
            words
                .iter()
                .map(|w| {
                    probes
                        .split(Split::VocabProbe)
                        .find(|r| r.token.as_deref() == Some(w.as_str()))
                        .map(|r| r.embedding_f64())
                        .ok_or_else(|| Error::InvalidArgument(format!("no probe record for label word {w:?}")))
                })
                .collect()
        })
        .collect()
}

/// Elementwise mean of equally-shaped matrices (e.g. one per seed).
pub fn mean_matrix(ms: &[Vec<Vec<f64>>]) -> Option<Vec<Vec<f64>>> {
    let first = ms.first()?;
    let k = ms.len() as f64;
    Some(
        (0..first.len())
            .map(|i| {
                (0..first[i].len())
                    .map(|j| ms.iter().map(|m| m[i][j]).sum::<f64>() / k)
                    .collect()
            })
            .collect(),
    )
}
