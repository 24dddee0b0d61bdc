//! Python bindings: datasets, episodes, training, scoring and probing.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use proto_verbalizer::analysis::probe_vocabulary;
use proto_verbalizer::proto::{read_checkpoint, total_loss, PrototypeSet};
use proto_verbalizer::scoring::{ensemble_scores, proto_scores, EnsembleConfig, ManualScorer, PrototypeScorer, Scorer};
use proto_verbalizer::synth::ClusterSpec;
use proto_verbalizer::{EmbeddingDataset, EmbeddingRecord, Error, LossVariant, Split, TrainConfig, TrainResult};

fn to_py(e: Error) -> PyErr {
    if e.is_io() {
        PyOSError::new_err(e.to_string())
    } else if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn parse_split(s: &str) -> PyResult<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        "vocab_probe" => Ok(Split::VocabProbe),
        other => Err(PyValueError::new_err(format!("unknown split {other:?}"))),
    }
}

fn parse_variant(s: &str) -> PyResult<LossVariant> {
    s.parse().map_err(to_py)
}

#[pyclass(frozen, module = "protoverb")]
struct Dataset {
    inner: EmbeddingDataset,
}

#[pymethods]
impl Dataset {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.header.class_names.clone()
    }

    #[getter]
    fn template_id(&self) -> String {
        self.inner.header.template_id.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    #[pyo3(signature = (split = "train"))]
    fn class_counts(&self, split: &str) -> PyResult<Vec<usize>> {
        Ok(self.inner.class_counts(parse_split(split)?))
    }

    /// Embeddings of one split, in file order.
    #[pyo3(signature = (split = "train"))]
    fn embeddings(&self, split: &str) -> PyResult<Vec<Vec<f32>>> {
        let split = parse_split(split)?;
        Ok(self.inner.split(split).map(|r| r.embedding.clone()).collect())
    }

    #[pyo3(signature = (split = "train"))]
    fn labels(&self, split: &str) -> PyResult<Vec<Option<usize>>> {
        let split = parse_split(split)?;
        Ok(self.inner.split(split).map(|r| r.label).collect())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        proto_verbalizer::write_dataset(path, &self.inner).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(records={}, dim={}, classes={:?})",
            self.inner.records.len(),
            self.inner.dim(),
            self.inner.header.class_names
        )
    }
}

#[pyclass(frozen, module = "protoverb")]
struct Episode {
    inner: proto_verbalizer::Episode,
}

#[pymethods]
impl Episode {
    #[getter]
    fn n_way(&self) -> usize {
        self.inner.n_way
    }

    #[getter]
    fn k_shot(&self) -> usize {
        self.inner.k_shot
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn num_flipped(&self) -> usize {
        self.inner.num_flipped()
    }

    /// Record ids grouped by original class.
    fn support_ids(&self) -> Vec<Vec<String>> {
        self.inner.support.iter().map(|c| c.iter().map(|e| e.id.clone()).collect()).collect()
    }

    /// Current labels in class-major order.
    fn labels(&self) -> Vec<usize> {
        self.inner.entries().map(|e| e.label).collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(frozen, module = "protoverb")]
struct Model {
    inner: TrainResult,
}

#[pymethods]
impl Model {
    #[getter]
    fn weight(&self) -> Vec<Vec<f64>> {
        self.inner.encoder.weight().to_rows()
    }

    #[getter]
    fn prototypes(&self) -> Vec<Vec<f64>> {
        self.inner.prototypes.as_slice().to_vec()
    }

    /// `(step, l_ins, l_proto, total)` per optimisation step.
    #[getter]
    fn loss_trace(&self) -> Vec<(usize, f64, f64, f64)> {
        self.inner.loss_trace.iter().map(|r| (r.step, r.l_ins, r.l_proto, r.total)).collect()
    }

    fn project(&self, h: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.encoder.project(&h).map_err(to_py)
    }

    /// Softmax over cosine similarities to the prototypes.
    fn scores(&self, h: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(proto_scores(&self.inner.encoder, &self.inner.prototypes, &h, "query").map_err(to_py)?.scores)
    }

    fn predict(&self, h: Vec<f64>) -> PyResult<usize> {
        Ok(proto_verbalizer::predict(&self.scores(h)?))
    }

    /// Accuracy on the test split; several scorers are ensembled.
    #[pyo3(signature = (dataset, scorers = vec!["proto".to_string()]))]
    fn evaluate(&self, dataset: &Dataset, scorers: Vec<String>) -> PyResult<BTreeMap<String, Py<PyAny>>> {
        let proto = PrototypeScorer::new(&self.inner);
        let mut list: Vec<&dyn Scorer> = Vec::new();
        for s in &scorers {
            match s.as_str() {
                "proto" => list.push(&proto),
                "manual" => list.push(&ManualScorer),
                other => return Err(PyValueError::new_err(format!("unknown scorer {other:?}"))),
            }
        }
        let eval = proto_verbalizer::evaluate(&dataset.inner, &list).map_err(to_py)?;
        Python::attach(|py| {
            let mut out = BTreeMap::new();
            out.insert("accuracy".into(), eval.accuracy.into_pyobject(py)?.into_any().unbind());
            out.insert("per_class".into(), eval.per_class.clone().into_pyobject(py)?.into_any().unbind());
            out.insert("per_scorer_accuracy".into(), eval.per_scorer_accuracy.clone().into_pyobject(py)?.into_any().unbind());
            out.insert("scorer_ids".into(), eval.scorer_ids.clone().into_pyobject(py)?.into_any().unbind());
            out.insert("n_test".into(), eval.n_test().into_pyobject(py)?.into_any().unbind());
            Ok(out)
        })
    }

    /// Top-k vocabulary probe tokens per class as `(token, score)` pairs.
    #[pyo3(signature = (dataset, top_k = 10))]
    fn probe(&self, dataset: &Dataset, top_k: usize) -> PyResult<Vec<Vec<(String, f64)>>> {
        let probes: Vec<&EmbeddingRecord> = dataset.inner.split(Split::VocabProbe).collect();
        let report = probe_vocabulary(&self.inner, &probes, top_k).map_err(to_py)?;
        Ok(report
            .classes
            .into_iter()
            .map(|c| c.into_iter().map(|e| (e.token, e.score)).collect())
            .collect())
    }
}

#[pyfunction]
fn load_dataset(path: &str) -> PyResult<Dataset> {
    Ok(Dataset { inner: proto_verbalizer::load_dataset(path).map_err(to_py)? })
}

/// Gaussian class clusters; `dim` must exceed `n_classes`.
#[pyfunction]
#[pyo3(signature = (n_classes = 4, dim = 16, train_per_class = 20, test_per_class = 50, separation = 4.0, nuisance = 1.0, probe_words_per_class = 0, with_logprobs = false, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn synthetic_dataset(
    n_classes: usize,
    dim: usize,
    train_per_class: usize,
    test_per_class: usize,
    separation: f64,
    nuisance: f64,
    probe_words_per_class: usize,
    with_logprobs: bool,
    seed: u64,
) -> PyResult<Dataset> {
    let spec = ClusterSpec {
        n_classes,
        dim,
        train_per_class,
        test_per_class,
        separation,
        nuisance,
        probe_words_per_class,
        with_logprobs,
        seed,
        ..ClusterSpec::default()
    };
    Ok(Dataset { inner: proto_verbalizer::synth::synthetic_dataset(&spec).map_err(to_py)? })
}

#[pyfunction]
#[pyo3(signature = (dataset, k_shot, seed, n_way = None))]
fn sample_episode(dataset: &Dataset, k_shot: usize, seed: u64, n_way: Option<usize>) -> PyResult<Episode> {
    let n_way = n_way.unwrap_or(dataset.inner.n_classes());
    let inner = proto_verbalizer::sample_episode(&dataset.inner, n_way, k_shot, seed).map_err(to_py)?;
    Ok(Episode { inner })
}

#[pyfunction]
fn inject_noise(episode: &Episode, m: usize, seed: u64) -> PyResult<Episode> {
    Ok(Episode { inner: proto_verbalizer::inject_noise(&episode.inner, m, seed).map_err(to_py)? })
}

#[pyfunction]
#[pyo3(signature = (dataset, episode, steps = 200, learning_rate = 0.01, seed = 0, variant = "full", proto_dim = 128, init_scale = 1.0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &Dataset,
    episode: &Episode,
    steps: usize,
    learning_rate: f64,
    seed: u64,
    variant: &str,
    proto_dim: usize,
    init_scale: f64,
) -> PyResult<Model> {
    let config = TrainConfig {
        steps,
        learning_rate,
        seed,
        loss_variant: parse_variant(variant)?,
        proto_dim,
        init_scale,
        ..TrainConfig::default()
    };
    config.validate().map_err(to_py)?;
    let inner = py
        .detach(|| proto_verbalizer::train(&dataset.inner, &episode.inner, &config))
        .map_err(to_py)?;
    Ok(Model { inner })
}

/// Reads a checkpoint written by `pverb train`.
#[pyfunction]
fn load_checkpoint(path: &str) -> PyResult<Model> {
    Ok(Model { inner: read_checkpoint(path).map_err(to_py)?.result })
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    proto_verbalizer::proto::cosine_similarity(&a, &b).map_err(to_py)
}

#[pyfunction]
fn standard_scale(scores: Vec<f64>) -> PyResult<Vec<f64>> {
    proto_verbalizer::standard_scale(&scores).map_err(to_py)
}

#[pyfunction]
fn predict(scores: Vec<f64>) -> usize {
    proto_verbalizer::predict(&scores)
}

/// Mean of the standard-scaled score vectors, one per scorer.
#[pyfunction]
fn ensemble(scores: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let ids: Vec<String> = (0..scores.len()).map(|i| format!("s{i}")).collect();
    let config = EnsembleConfig::new(ids.clone()).map_err(to_py)?;
    let per = scores
        .into_iter()
        .zip(&ids)
        .map(|(s, id)| proto_verbalizer::ClassScores::new(s, id.as_str(), "query"))
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
    Ok(ensemble_scores(&per, &config).map_err(to_py)?.scores)
}

/// `(l_ins, l_proto, total)` for already-projected instances grouped by class.
#[pyfunction]
#[pyo3(signature = (groups, prototypes, variant = "full"))]
fn losses(groups: Vec<Vec<Vec<f64>>>, prototypes: Vec<Vec<f64>>, variant: &str) -> PyResult<(f64, f64, f64)> {
    let protos = PrototypeSet::new(prototypes).map_err(to_py)?;
    let b = total_loss(&groups, &protos, parse_variant(variant)?).map_err(to_py)?;
    Ok((b.l_ins, b.l_proto, b.total))
}

#[pymodule]
fn protoverb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Episode>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(sample_episode, m)?)?;
    m.add_function(wrap_pyfunction!(inject_noise, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(load_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(standard_scale, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(losses, m)?)?;
    Ok(())
}
