//! `pverb grid`: one JSON report per cell under `<out>/cells/`, reused on
//! reruns when its digest (dataset bytes, cell key, training config) matches,
//! plus `aggregate.json` and a long-format `long.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use proto_verbalizer::analysis::{aggregate, run_cells, write_long_csv, CellKey, CellResult, ExperimentGrid, GridSummary};
use proto_verbalizer::{EmbeddingDataset, LossVariant, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::{train_config, FileConfig, TrainFlags};
use crate::manifest::{text_digest, ManifestBuilder};
use crate::{load_checked, write_json, UsageError};

#[derive(clap::Args)]
pub struct GridArgs {
    /// Dataset files, one per template.
    #[arg(long, required = true)]
    dataset: Vec<PathBuf>,
    /// Only run these template ids.
    #[arg(long, value_delimiter = ',')]
    template: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seed: Vec<u64>,
    /// Noise levels (number of corrupted support labels).
    #[arg(long, value_delimiter = ',', default_value = "0")]
    noise: Vec<usize>,
    #[arg(long = "variants", value_delimiter = ',', default_value = "full")]
    variants: Vec<LossVariant>,
    #[command(flatten)]
    train: TrainFlags,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CellReport {
    digest: String,
    result: CellResult,
    scorer_ids: Vec<String>,
}

#[derive(Serialize)]
struct Aggregate<'a> {
    grid: &'a ExperimentGrid,
    train: &'a TrainConfig,
    summary: GridSummary,
}

fn cell_digest(dataset_digest: &str, key: &CellKey, base: &TrainConfig) -> Result<String> {
    Ok(text_digest(&[
        dataset_digest,
        &serde_json::to_string(key)?,
        &serde_json::to_string(base)?,
    ]))
}

fn reuse(path: &Path, digest: &str) -> Option<CellResult> {
    let text = fs::read_to_string(path).ok()?;
    let report: CellReport = serde_json::from_str(&text).ok()?;
    (report.digest == digest).then_some(report.result)
}

pub fn cmd_grid(args: GridArgs) -> Result<()> {
    let mut mb = ManifestBuilder::new("grid");
    if args.train.variant.is_some() {
        bail!(UsageError("grid takes loss variants as --variants a,b,...".into()));
    }
    let file = FileConfig::load(args.train.config.as_deref())?;
    // Seed and variant are set per cell.
    let base = TrainConfig {
        loss_variant: LossVariant::default(),
        ..train_config(&args.train, &file, 0)
    };
    base.validate().map_err(|e| UsageError(e.to_string()))?;

    let mut datasets: BTreeMap<String, (EmbeddingDataset, String)> = BTreeMap::new();
    for path in &args.dataset {
        let ds = load_checked(path, None)?;
        let digest = mb.input(path)?;
        let template = ds.header.template_id.clone();
        if !args.template.is_empty() && !args.template.contains(&template) {
            continue;
        }
        if datasets.insert(template.clone(), (ds, digest)).is_some() {
            bail!(UsageError(format!("two datasets share template {template:?}")));
        }
    }
    if datasets.is_empty() {
        bail!(UsageError("no dataset matches the requested templates".into()));
    }
    let grid = ExperimentGrid {
        k_values: args.k.clone(),
        seeds: args.seed.clone(),
        noise_levels: args.noise.clone(),
        loss_variants: args.variants.clone(),
        templates: datasets.keys().cloned().collect(),
    };
    grid.validate().map_err(|e| UsageError(e.to_string()))?;

    let cell_dir = args.out.join("cells");
    fs::create_dir_all(&cell_dir).with_context(|| format!("creating {}", cell_dir.display()))?;

    let mut results: Vec<CellResult> = Vec::new();
    let (mut reused, mut computed) = (0usize, 0usize);
    for (template, (ds, ds_digest)) in &datasets {
        let keys: Vec<CellKey> = grid.cells().into_iter().filter(|k| &k.template == template).collect();
        let mut pending = Vec::new();
        let mut slots: Vec<Option<CellResult>> = Vec::with_capacity(keys.len());
        for key in &keys {
            let digest = cell_digest(ds_digest, key, &base)?;
            let hit = reuse(&cell_dir.join(format!("{}.json", key.slug())), &digest);
            if hit.is_none() {
                pending.push((slots.len(), key.clone(), digest));
            }
            slots.push(hit);
        }
        reused += keys.len() - pending.len();
        computed += pending.len();
        let todo: Vec<CellKey> = pending.iter().map(|p| p.1.clone()).collect();
        let fresh = run_cells(ds, &todo, &base, args.workers)?;
        for ((slot, key, digest), result) in pending.into_iter().zip(fresh) {
            let report = CellReport {
                digest,
                result: result.clone(),
                scorer_ids: vec!["proto".into()],
            };
            write_json(&cell_dir.join(format!("{}.json", key.slug())), &report)?;
            slots[slot] = Some(result);
        }
        results.extend(slots.into_iter().map(|s| s.expect("filled")));
    }

    let agg = Aggregate {
        grid: &grid,
        train: &base,
        summary: aggregate(&results),
    };
    write_json(&args.out.join("aggregate.json"), &agg)?;
    let mut csv = Vec::new();
    write_long_csv(&results, &mut csv)?;
    fs::write(args.out.join("long.csv"), csv).context("writing long.csv")?;

    eprintln!("{} cells: {computed} computed, {reused} reused", results.len());
    mb.extra("cells_computed", computed);
    mb.extra("cells_reused", reused);
    mb.write(
        &args.out.join("manifest.json"),
        serde_json::json!({ "grid": grid, "train": base, "workers": args.workers }),
    )
}
