//! Synthetic cluster datasets with controllable separation.
//!
//! Class centers sit on orthonormal directions scaled so that any two centers
//! are `separation * sigma` apart; samples add isotropic Gaussian noise of
//! standard deviation `sigma` within the span of the class directions and
//! `sigma * nuisance` along the remaining orthonormal directions, plus an
//! optional shared offset along a direction orthogonal to every center.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetHeader, EmbeddingDataset, EmbeddingRecord, Split, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Probe tokens placed near each class center.
    pub probe_words_per_class: usize,
    /// Probe tokens drawn from pure noise.
    pub probe_noise_words: usize,
    /// Distance between any two class centers, in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    /// Norm of the shared offset, in units of `sigma`.
    pub offset: f64,
    /// Noise scale along directions that carry no class signal, relative to
    /// `sigma`. 1.0 gives isotropic clusters.
    pub nuisance: f64,
    pub with_logprobs: bool,
    pub seed: u64,
    pub template_id: String,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            dim: 16,
            train_per_class: 20,
            test_per_class: 50,
            probe_words_per_class: 0,
            probe_noise_words: 0,
            separation: 4.0,
            sigma: 1.0,
            offset: 0.0,
            nuisance: 1.0,
            with_logprobs: false,
            seed: 0,
            template_id: "synthetic".into(),
        }
    }
}

pub fn class_name(n: usize) -> String {
    format!("class{n}")
}

/// Name of the `j`-th probe token near class `n`.
pub fn class_word(n: usize, j: usize) -> String {
    format!("{}_w{j}", class_name(n))
}

/// Orthonormal class directions; the extra final row is the offset direction.
fn directions(rng: &mut SeededRng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    assert!(count <= dim, "need dim >= number of directions");
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for u in &out {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

fn gaussian(rng: &mut SeededRng) -> f64 {
    StandardNormal.sample(rng.chacha())
}

/// Needs `dim > n_classes`: one orthonormal direction per class plus one for
/// the shared offset.
pub fn synthetic_dataset(spec: &ClusterSpec) -> Result<EmbeddingDataset> {
    let n = spec.n_classes;
    if n == 0 || spec.dim <= n {
        return Err(Error::InvalidArgument(format!(
            "synthetic clusters need 1 <= n_classes < dim, got n_classes {n}, dim {}",
            spec.dim
        )));
    }
    let scales_ok = [spec.sigma, spec.separation, spec.offset, spec.nuisance]
        .iter()
        .all(|x| x.is_finite() && *x >= 0.0);
    if !scales_ok || spec.sigma == 0.0 {
        return Err(Error::InvalidArgument(
            "sigma must be positive; separation, offset and nuisance non-negative".into(),
        ));
    }
    let mut rng = SeededRng::for_stream(spec.seed, Stream::Synthetic);
    let dirs = directions(&mut rng, spec.dim, spec.dim);
    let radius = spec.separation * spec.sigma / std::f64::consts::SQRT_2;
    let offset: Vec<f64> = dirs[n].iter().map(|x| x * spec.offset * spec.sigma).collect();
    let centers: Vec<Vec<f64>> = dirs[..n]
        .iter()
        .map(|d| d.iter().zip(&offset).map(|(x, o)| x * radius + o).collect())
        .collect();

    // per-direction noise scale in the rotated basis
    let scales: Vec<f64> = (0..dirs.len())
        .map(|d| if d < n { 1.0 } else { spec.nuisance })
        .collect();
    let draw = |center: &[f64], sigma: f64, rng: &mut SeededRng| -> Vec<f32> {
        let mut x = center.to_vec();
        for (dir, scale) in dirs.iter().zip(&scales) {
            let z = sigma * scale * gaussian(rng);
            x.iter_mut().zip(dir).for_each(|(xi, di)| *xi += z * di);
        }
        x.into_iter().map(|v| v as f32).collect()
    };

    let mut records = Vec::new();
    for (split, per_class) in [(Split::Train, spec.train_per_class), (Split::Test, spec.test_per_class)] {
        let tag = if split == Split::Train { "train" } else { "test" };
        for (class, center) in centers.iter().enumerate() {
            for i in 0..per_class {
                let embedding = draw(center, spec.sigma, &mut rng);
                let label_word_logprobs = spec
                    .with_logprobs
                    .then(|| manual_logprobs(&embedding, &dirs[..n], radius, &mut rng));
                records.push(EmbeddingRecord {
                    id: format!("{tag}-{class}-{i}"),
                    split,
                    label: Some(class),
                    embedding,
                    token: None,
                    label_word_logprobs,
                });
            }
        }
    }
    for (class, center) in centers.iter().enumerate() {
        for j in 0..spec.probe_words_per_class {
            records.push(EmbeddingRecord {
                id: format!("probe-{class}-{j}"),
                split: Split::VocabProbe,
                label: None,
                embedding: draw(center, 0.3 * spec.sigma, &mut rng),
                token: Some(class_word(class, j)),
                label_word_logprobs: None,
            });
        }
    }
    let origin = vec![0.0; spec.dim];
    for j in 0..spec.probe_noise_words {
        records.push(EmbeddingRecord {
            id: format!("probe-noise-{j}"),
            split: Split::VocabProbe,
            label: None,
            embedding: draw(&origin, spec.sigma, &mut rng),
            token: Some(format!("noise_{j}")),
            label_word_logprobs: None,
        });
    }

    let header = DatasetHeader {
        format_version: FORMAT_VERSION,
        dim: spec.dim,
        class_names: (0..n).map(class_name).collect(),
        template_id: spec.template_id.clone(),
        model_id: format!("synthetic-clusters-seed{}", spec.seed),
    };
    EmbeddingDataset::new(header, records)
}

/// Stand-in for a masked LM's label-word log-probabilities: a log-softmax over
/// noisy projections onto the class directions, two words per class.
fn manual_logprobs(x: &[f32], dirs: &[Vec<f64>], radius: f64, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let logits: Vec<f64> = dirs
        .iter()
        .map(|d| {
            let p: f64 = d.iter().zip(x).map(|(a, &b)| a * b as f64).sum();
            2.0 * p / radius.max(1e-12) + gaussian(rng)
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits
        .iter()
        .map(|l| vec![l - lse, l - lse - 0.5])
        .collect()
}
