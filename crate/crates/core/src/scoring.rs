//! Turning representations into predictions.
//!
//! Prototype scores are the softmax over cosine similarities to the class
//! prototypes. Manual-verbalizer scores are the arithmetic mean of each
//! class's label-word log-probabilities. Several scorers are combined by
//! standard-scaling each score vector across its classes (population standard
//! deviation) and averaging. Argmax ties go to the lowest class index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingDataset, EmbeddingRecord, Split};
use crate::error::{Error, Result};
use crate::linalg::softmax;
use crate::proto::{PrototypeSet, ProjectionEncoder, TrainResult};

pub const PROTO_SCORER: &str = "proto";
pub const MANUAL_SCORER: &str = "manual";
pub const ENSEMBLE_SCORER: &str = "ensemble";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub scores: Vec<f64>,
    pub scorer_id: String,
    pub instance_id: String,
}

impl ClassScores {
    pub fn new(scores: Vec<f64>, scorer_id: impl Into<String>, instance_id: impl Into<String>) -> Result<Self> {
        let scorer_id = scorer_id.into();
        if scores.is_empty() {
            return Err(Error::Empty(format!("scores from {scorer_id}")));
        }
        if scores.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("scores from {scorer_id}")));
        }
        Ok(Self {
            scores,
            scorer_id,
            instance_id: instance_id.into(),
        })
    }

    pub fn predict(&self) -> usize {
        predict(&self.scores)
    }
}

/// Something that maps a record to per-class scores.
pub trait Scorer: Sync {
    fn id(&self) -> &str;
    fn score(&self, record: &EmbeddingRecord) -> Result<ClassScores>;
}

pub fn proto_scores(
    encoder: &ProjectionEncoder,
    prototypes: &PrototypeSet,
    h: &[f64],
    instance_id: &str,
) -> Result<ClassScores> {
    let v = encoder.project(h)?;
    let sims = prototypes.similarities(&v)?;
    ClassScores::new(softmax(&sims), PROTO_SCORER, instance_id)
}

/// Index of the largest score; the lowest index wins ties.
pub fn predict(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn manual_scores(record: &EmbeddingRecord) -> Result<ClassScores> {
    let lp = record
        .label_word_logprobs
        .as_ref()
        .ok_or_else(|| Error::MissingLogProbs { id: record.id.clone() })?;
    let scores = lp
        .iter()
        .map(|words| words.iter().sum::<f64>() / words.len() as f64)
        .collect();
    ClassScores::new(scores, MANUAL_SCORER, &record.id)
}

/// Subtract the mean, divide by the population standard deviation. A constant
/// vector maps to all zeros.
pub fn standard_scale(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "standard scaling needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; scores.len()]);
    }
    Ok(scores.iter().map(|x| (x - mean) / std).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaler {
    #[default]
    PerInstanceStandard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub scorer_ids: Vec<String>,
    #[serde(default)]
    pub scaler: Scaler,
}

impl EnsembleConfig {
    pub fn new(scorer_ids: Vec<String>) -> Result<Self> {
        if scorer_ids.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one scorer".into()));
        }
        for (i, id) in scorer_ids.iter().enumerate() {
            if scorer_ids[..i].contains(id) {
                return Err(Error::InvalidArgument(format!("duplicate scorer id {id:?}")));
            }
        }
        Ok(Self {
            scorer_ids,
            scaler: Scaler::PerInstanceStandard,
        })
    }
}

/// Elementwise mean of the standard-scaled score vectors named in `config`.
pub fn ensemble_scores(per_scorer: &[ClassScores], config: &EnsembleConfig) -> Result<ClassScores> {
    let mut acc: Option<Vec<f64>> = None;
    let mut instance_id = String::new();
    for id in &config.scorer_ids {
        let s = per_scorer
            .iter()
            .find(|s| &s.scorer_id == id)
            .ok_or_else(|| Error::MissingScorer(id.clone()))?;
        let scaled = match config.scaler {
            Scaler::PerInstanceStandard => standard_scale(&s.scores)?,
        };
        match acc.as_mut() {
            None => {
                instance_id = s.instance_id.clone();
                acc = Some(scaled);
            }
            Some(a) => {
                if a.len() != scaled.len() {
                    return Err(Error::DimensionMismatch {
                        context: format!("class count of scorer {id}"),
                        expected: a.len(),
                        actual: scaled.len(),
                    });
                }
                a.iter_mut().zip(&scaled).for_each(|(x, y)| *x += y);
            }
        }
    }
    let k = config.scorer_ids.len() as f64;
    let mean = acc.expect("non-empty config").into_iter().map(|x| x / k).collect();
    ClassScores::new(mean, ENSEMBLE_SCORER, instance_id)
}

pub struct PrototypeScorer<'a> {
    pub encoder: &'a ProjectionEncoder,
    pub prototypes: &'a PrototypeSet,
}

impl<'a> PrototypeScorer<'a> {
    pub fn new(result: &'a TrainResult) -> Self {
        Self {
            encoder: &result.encoder,
            prototypes: &result.prototypes,
        }
    }
}

impl Scorer for PrototypeScorer<'_> {
    fn id(&self) -> &str {
        PROTO_SCORER
    }

    fn score(&self, record: &EmbeddingRecord) -> Result<ClassScores> {
        proto_scores(self.encoder, self.prototypes, &record.embedding_f64(), &record.id)
    }
}

pub struct ManualScorer;

impl Scorer for ManualScorer {
    fn id(&self) -> &str {
        MANUAL_SCORER
    }

    fn score(&self, record: &EmbeddingRecord) -> Result<ClassScores> {
        manual_scores(record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub gold: usize,
    pub predicted: usize,
    pub scores: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `None` for classes without test records.
    pub per_class: Vec<Option<f64>>,
    pub per_scorer_accuracy: BTreeMap<String, f64>,
    /// Scorer ids in report order; `ensemble` is appended when more than one
    /// scorer is configured.
    pub scorer_ids: Vec<String>,
    pub predictions: Vec<Prediction>,
}

impl Evaluation {
    pub fn n_test(&self) -> usize {
        self.predictions.len()
    }
}

/// Scores the whole test split. With several scorers the prediction comes
/// from their ensemble; with one it comes from that scorer directly.
pub fn evaluate(dataset: &EmbeddingDataset, scorers: &[&dyn Scorer]) -> Result<Evaluation> {
    if scorers.is_empty() {
        return Err(Error::InvalidArgument("at least one scorer is required".into()));
    }
    let config = EnsembleConfig::new(scorers.iter().map(|s| s.id().to_string()).collect())?;
    let n = dataset.n_classes();
    let mut correct = vec![0usize; n];
    let mut totals = vec![0usize; n];
    let mut scorer_correct = vec![0usize; scorers.len()];
    let mut predictions = Vec::new();

    for record in dataset.split(Split::Test) {
        let gold = record.label.expect("test records are labelled");
        let per: Vec<ClassScores> = scorers.iter().map(|s| s.score(record)).collect::<Result<_>>()?;
        for (i, s) in per.iter().enumerate() {
            if s.scores.len() != n {
                return Err(Error::DimensionMismatch {
                    context: format!("scores from {} for {}", s.scorer_id, record.id),
                    expected: n,
                    actual: s.scores.len(),
                });
            }
            if s.predict() == gold {
                scorer_correct[i] += 1;
            }
        }
        let mut scores: BTreeMap<String, Vec<f64>> =
            per.iter().map(|s| (s.scorer_id.clone(), s.scores.clone())).collect();
        let predicted = if per.len() == 1 {
            per[0].predict()
        } else {
            let e = ensemble_scores(&per, &config)?;
            let p = e.predict();
            scores.insert(ENSEMBLE_SCORER.to_string(), e.scores);
            p
        };
        totals[gold] += 1;
        if predicted == gold {
            correct[gold] += 1;
        }
        predictions.push(Prediction {
            instance_id: record.id.clone(),
            gold,
            predicted,
            scores,
        });
    }

    if predictions.is_empty() {
        return Err(Error::Empty("test split has no records".into()));
    }
    let m = predictions.len() as f64;
    let accuracy = correct.iter().sum::<usize>() as f64 / m;
    let per_class = correct
        .iter()
        .zip(&totals)
        .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
        .collect();
    let per_scorer_accuracy = scorers
        .iter()
        .zip(&scorer_correct)
        .map(|(s, &c)| (s.id().to_string(), c as f64 / m))
        .collect();
    let mut scorer_ids = config.scorer_ids;
    if scorer_ids.len() > 1 {
        scorer_ids.push(ENSEMBLE_SCORER.to_string());
    }
    Ok(Evaluation {
        accuracy,
        per_class,
        per_scorer_accuracy,
        scorer_ids,
        predictions,
    })
}

/// JSON evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    pub n_test: usize,
    pub scorer_ids: Vec<String>,
    pub per_scorer_accuracy: BTreeMap<String, f64>,
    pub seed: u64,
    pub template_id: String,
}

impl EvalReport {
    pub fn new(eval: &Evaluation, seed: u64, template_id: &str) -> Self {
        Self {
            accuracy: eval.accuracy,
            per_class: eval.per_class.clone(),
            n_test: eval.n_test(),
            scorer_ids: eval.scorer_ids.clone(),
            per_scorer_accuracy: eval.per_scorer_accuracy.clone(),
            seed,
            template_id: template_id.to_string(),
        }
    }
}
