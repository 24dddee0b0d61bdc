use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::mean_std;
use crate::dataset::EmbeddingDataset;
use crate::episode::{inject_noise, sample_episode};
use crate::error::{Error, Result};
use crate::proto::{train, LossVariant, TrainConfig};
use crate::scoring::{evaluate, PrototypeScorer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub k_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub noise_levels: Vec<usize>,
    pub loss_variants: Vec<LossVariant>,
    pub templates: Vec<String>,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("k_values", self.k_values.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("noise_levels", self.noise_levels.is_empty()),
            ("loss_variants", self.loss_variants.is_empty()),
            ("templates", self.templates.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::InvalidArgument(format!("grid field {name} is empty")));
        }
        if self.k_values.contains(&0) {
            return Err(Error::InvalidArgument("k values must be positive".into()));
        }
        Ok(())
    }

    /// Every cell in canonical order (template, k, variant, m, seed).
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for template in &self.templates {
            for &k in &self.k_values {
                for &variant in &self.loss_variants {
                    for &m in &self.noise_levels {
                        for &seed in &self.seeds {
                            out.push(CellKey {
                                template: template.clone(),
                                k,
                                variant,
                                m,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub template: String,
    pub k: usize,
    pub variant: LossVariant,
    pub m: usize,
    pub seed: u64,
}

impl CellKey {
    /// File-name friendly identifier.
    pub fn slug(&self) -> String {
        let template: String = self
            .template
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        format!("{template}__k{}__{}__m{}__s{}", self.k, self.variant, self.m, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    pub n_test: usize,
}

/// Sample the clean episode for `key.seed`, corrupt `key.m` labels with the
/// same seed, train with `key.variant` and evaluate the prototype scorer on
/// the whole test split. Cells differing only in `m` share the clean episode.
pub fn run_cell(dataset: &EmbeddingDataset, key: &CellKey, base: &TrainConfig) -> Result<CellResult> {
    let n = dataset.n_classes();
    if key.m >= key.k * n && key.m > 0 {
        return Err(Error::InvalidArgument(format!(
            "noise level {} must be below k*N = {}",
            key.m,
            key.k * n
        )));
    }
    let clean = sample_episode(dataset, n, key.k, key.seed)?;
    let episode = inject_noise(&clean, key.m, key.seed)?;
    let config = TrainConfig {
        seed: key.seed,
        loss_variant: key.variant,
        ..base.clone()
    };
    let result = train(dataset, &episode, &config)?;
    let scorer = PrototypeScorer::new(&result);
    let eval = evaluate(dataset, &[&scorer])?;
    Ok(CellResult {
        key: key.clone(),
        accuracy: eval.accuracy,
        per_class: eval.per_class.clone(),
        n_test: eval.n_test(),
    })
}

/// Runs cells on up to `workers` threads; results come back in input order.
pub fn run_cells(
    dataset: &EmbeddingDataset,
    keys: &[CellKey],
    base: &TrainConfig,
    workers: usize,
) -> Result<Vec<CellResult>> {
    let workers = workers.clamp(1, keys.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<CellResult>>>> =
        Mutex::new((0..keys.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= keys.len() {
                    break;
                }
                let r = run_cell(dataset, &keys[i], base);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub template: String,
    pub k: usize,
    pub variant: LossVariant,
    pub m: usize,
    pub mean: f64,
    pub std: f64,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub template: String,
    pub k: usize,
    pub variant: LossVariant,
    pub m: usize,
    pub mean_drop: f64,
    pub std_drop: f64,
    pub seeds: Vec<u64>,
    pub drops: Vec<f64>,
}

/// Per-configuration means over seeds, plus paired accuracy drops against the
/// same-seed clean (m = 0) cell where one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub accuracy: Vec<AblationRow>,
    pub noise_drop: Vec<NoiseRow>,
}

type GroupKey = (String, usize, LossVariant, usize);

pub fn aggregate(cells: &[CellResult]) -> GridSummary {
    let mut groups: BTreeMap<GroupKey, Vec<(u64, f64)>> = BTreeMap::new();
    for c in cells {
        groups
            .entry((c.key.template.clone(), c.key.k, c.key.variant, c.key.m))
            .or_default()
            .push((c.key.seed, c.accuracy));
    }
    for v in groups.values_mut() {
        v.sort_by_key(|(seed, _)| *seed);
    }

    let accuracy = groups
        .iter()
        .map(|((template, k, variant, m), runs)| {
            let accs: Vec<f64> = runs.iter().map(|r| r.1).collect();
            let (mean, std) = mean_std(&accs);
            AblationRow {
                template: template.clone(),
                k: *k,
                variant: *variant,
                m: *m,
                mean,
                std,
                seeds: runs.iter().map(|r| r.0).collect(),
                accuracies: accs,
            }
        })
        .collect();

    let mut noise_drop = Vec::new();
    for ((template, k, variant, m), runs) in &groups {
        let Some(clean) = groups.get(&(template.clone(), *k, *variant, 0)) else {
            continue;
        };
        let clean: BTreeMap<u64, f64> = clean.iter().copied().collect();
        let paired: Vec<(u64, f64)> = runs
            .iter()
            .filter_map(|(seed, acc)| clean.get(seed).map(|c| (*seed, c - acc)))
            .collect();
        if paired.is_empty() {
            continue;
        }
        let drops: Vec<f64> = paired.iter().map(|p| p.1).collect();
        let (mean_drop, std_drop) = mean_std(&drops);
        noise_drop.push(NoiseRow {
            template: template.clone(),
            k: *k,
            variant: *variant,
            m: *m,
            mean_drop,
            std_drop,
            seeds: paired.iter().map(|p| p.0).collect(),
            drops,
        });
    }
    GridSummary { accuracy, noise_drop }
}

fn single_template(dataset: &EmbeddingDataset, grid: &ExperimentGrid) -> Result<ExperimentGrid> {
    grid.validate()?;
    Ok(ExperimentGrid {
        templates: vec![dataset.header.template_id.clone()],
        ..grid.clone()
    })
}

/// Mean and standard deviation of test accuracy per (k, variant) over the
/// grid's seeds, on clean episodes.
pub fn run_ablation(dataset: &EmbeddingDataset, grid: &ExperimentGrid, base: &TrainConfig) -> Result<Vec<AblationRow>> {
    let grid = ExperimentGrid {
        noise_levels: vec![0],
        ..single_template(dataset, grid)?
    };
    let cells = run_cells(dataset, &grid.cells(), base, 1)?;
    Ok(aggregate(&cells).accuracy)
}

/// Paired accuracy drop per (k, m) for `base.loss_variant`; m = 0 is always
/// included as the reference.
pub fn run_noise_sweep(dataset: &EmbeddingDataset, grid: &ExperimentGrid, base: &TrainConfig) -> Result<Vec<NoiseRow>> {
    let mut levels = grid.noise_levels.clone();
    if !levels.contains(&0) {
        levels.insert(0, 0);
    }
    let grid = ExperimentGrid {
        noise_levels: levels,
        loss_variants: vec![base.loss_variant],
        ..single_template(dataset, grid)?
    };
    let n = dataset.n_classes();
    for &k in &grid.k_values {
        for &m in &grid.noise_levels {
            if m > 0 && m >= k * n {
                return Err(Error::InvalidArgument(format!("noise level {m} must be below k*N = {}", k * n)));
            }
        }
    }
    let cells = run_cells(dataset, &grid.cells(), base, 1)?;
    Ok(aggregate(&cells).noise_drop)
}

/// Long-format CSV: template,k,seed,variant,m,accuracy.
pub fn write_long_csv(cells: &[CellResult], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
    w.write_record(["template", "k", "seed", "variant", "m", "accuracy"]).map_err(io)?;
    for c in cells {
        w.write_record([
            c.key.template.clone(),
            c.key.k.to_string(),
            c.key.seed.to_string(),
            c.key.variant.to_string(),
            c.key.m.to_string(),
            c.accuracy.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}
