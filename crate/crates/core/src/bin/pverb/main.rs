//! `pverb`: validate, sample, train, evaluate and analyse prototype verbalizers.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod config;
mod grid;
mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use proto_verbalizer::analysis::{label_word_embeddings, mean_matrix, probe_vocabulary, proto_manual_similarity};
use proto_verbalizer::dataset::{validate_file, Verbalizer};
use proto_verbalizer::episode::Episode;
use proto_verbalizer::proto::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader};
use proto_verbalizer::scoring::{evaluate, EvalReport, ManualScorer, PrototypeScorer, Scorer, MANUAL_SCORER, PROTO_SCORER};
use proto_verbalizer::synth::{synthetic_dataset, ClusterSpec};
use proto_verbalizer::{inject_noise, load_dataset, sample_episode, train, write_dataset, EmbeddingDataset, Split};
use serde::Serialize;

use crate::config::{train_config, Effective, FileConfig, TrainFlags};
use crate::manifest::{manifest_path, ManifestBuilder};

#[derive(Parser)]
#[command(name = "pverb", version, about = "Prototype verbalizers over exported [MASK] embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset file and report every violation.
    Validate {
        path: PathBuf,
        /// Write a run manifest here.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Draw an N-way K-shot episode (optionally with label noise) as JSON.
    Sample(SampleArgs),
    /// Learn an encoder and prototypes and write a checkpoint.
    Train(TrainArgs),
    /// Score the test split with one or more verbalizers.
    Eval(EvalArgs),
    /// Run a (template, k, variant, noise, seed) grid with resumable cells.
    Grid(grid::GridArgs),
    /// Rank probe tokens against each learned prototype.
    Probe(ProbeArgs),
    /// Softmax-normalised similarity between prototypes and label words.
    Similarity(SimilarityArgs),
    /// Write a synthetic cluster dataset.
    Synth(SynthArgs),
}

#[derive(clap::Args)]
struct EpisodeFlags {
    #[arg(long)]
    dataset: PathBuf,
    /// Number of classes; defaults to the dataset's class count.
    #[arg(long)]
    n_way: Option<usize>,
    /// Shots per class.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of support labels to corrupt.
    #[arg(long)]
    noise: Option<usize>,
    /// Corruption seed; defaults to --seed.
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Require the dataset's template id to match.
    #[arg(long)]
    template: Option<String>,
}

#[derive(clap::Args)]
struct SampleArgs {
    #[command(flatten)]
    episode: EpisodeFlags,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[command(flatten)]
    episode: EpisodeFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Train on a previously sampled episode instead of sampling one.
    #[arg(long)]
    episode_file: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated scorers: proto, manual.
    #[arg(long, value_delimiter = ',', default_value = "proto")]
    scorers: Vec<String>,
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-instance predictions as NDJSON.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file holding vocab_probe records.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SimilarityArgs {
    /// One or more checkpoints (e.g. one per seed); matrices are averaged
    /// after the per-checkpoint softmax.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    /// Dataset file holding vocab_probe records for the label words.
    #[arg(long)]
    probes: PathBuf,
    /// JSON object mapping class name to its label words.
    #[arg(long)]
    verbalizer: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SynthArgs {
    /// JSON file with cluster settings; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    n_way: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    nuisance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Flag combinations rejected before any work is done.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        return 1;
    }
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<proto_verbalizer::Error>())
        .any(|e| e.is_numerical());
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Validate { path, manifest } => cmd_validate(&path, manifest.as_deref()),
        Command::Sample(args) => cmd_sample(args).map(|_| 0),
        Command::Train(args) => cmd_train(args).map(|_| 0),
        Command::Eval(args) => cmd_eval(args).map(|_| 0),
        Command::Grid(args) => grid::cmd_grid(args).map(|_| 0),
        Command::Probe(args) => cmd_probe(args).map(|_| 0),
        Command::Similarity(args) => cmd_similarity(args).map(|_| 0),
        Command::Synth(args) => cmd_synth(args).map(|_| 0),
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn load_checked(path: &Path, template: Option<&str>) -> Result<EmbeddingDataset> {
    let ds = load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(t) = template {
        if ds.header.template_id != t {
            bail!(
                "{} has template {:?}, expected {t:?}",
                path.display(),
                ds.header.template_id
            );
        }
    }
    Ok(ds)
}

fn cmd_validate(path: &Path, manifest: Option<&Path>) -> Result<u8> {
    let mut mb = ManifestBuilder::new("validate");
    // i/o failures surface as errors, format problems as diagnostics
    let report = validate_file(path)?;
    for d in &report.diagnostics {
        println!("{d}");
    }
    println!("{} records, {} errors", report.n_records, report.diagnostics.len());
    if let Some(ds) = &report.dataset {
        let counts = |s| ds.class_counts(s);
        println!(
            "train per class {:?}, test per class {:?}, probes {}",
            counts(Split::Train),
            counts(Split::Test),
            ds.split(Split::VocabProbe).count()
        );
    }
    if let Some(m) = manifest {
        mb.input(path)?;
        mb.extra("errors", report.diagnostics.len());
        mb.write(m, serde_json::json!({ "path": path }))?;
    }
    Ok(if report.is_clean() { 0 } else { 2 })
}

fn resolve_episode(flags: &EpisodeFlags, file: &FileConfig, ds: &EmbeddingDataset) -> Result<(Episode, Effective)> {
    let k = flags
        .k
        .or(file.k)
        .ok_or_else(|| UsageError("--k is required".into()))?;
    let seed = flags.seed.or(file.seed).unwrap_or(0);
    let noise = flags.noise.or(file.noise).unwrap_or(0);
    let noise_seed = flags.noise_seed.or(file.noise_seed).unwrap_or(seed);
    let n_way = flags.n_way.or(file.n_way).unwrap_or(ds.n_classes());
    let clean = sample_episode(ds, n_way, k, seed)?;
    let episode = inject_noise(&clean, noise, noise_seed)?;
    let eff = Effective {
        n_way: Some(n_way),
        k,
        seed,
        noise,
        noise_seed,
        train: Default::default(),
    };
    Ok((episode, eff))
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let mut mb = ManifestBuilder::new("sample");
    let file = FileConfig::load(args.config.as_deref())?;
    let ds = load_checked(&args.episode.dataset, args.episode.template.as_deref())?;
    mb.input(&args.episode.dataset)?;
    let (episode, eff) = resolve_episode(&args.episode, &file, &ds)?;
    let text = serde_json::to_string_pretty(&episode)? + "\n";
    match &args.out {
        Some(out) => {
            fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
            mb.write(&manifest_path(out), &eff)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut mb = ManifestBuilder::new("train");
    let file = FileConfig::load(args.train.config.as_deref())?;
    if let Some(c) = &args.train.config {
        mb.input(c)?;
    }
    let ds = load_checked(&args.episode.dataset, args.episode.template.as_deref())?;
    mb.input(&args.episode.dataset)?;

    let (episode, mut eff) = match &args.episode_file {
        Some(path) => {
            mb.input(path)?;
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let ep: Episode = serde_json::from_str(&text).with_context(|| format!("parsing episode {}", path.display()))?;
            check_episode(&ep, &ds)?;
            let eff = Effective {
                n_way: Some(ep.n_way),
                k: ep.k_shot,
                seed: ep.seed,
                noise: ep.noise.map_or(0, |n| n.num_corrupted),
                noise_seed: ep.noise.map_or(ep.seed, |n| n.corruption_seed),
                train: Default::default(),
            };
            (ep, eff)
        }
        None => resolve_episode(&args.episode, &file, &ds)?,
    };
    eff.train = train_config(&args.train, &file, eff.seed);
    eff.train.validate().map_err(|e| UsageError(e.to_string()))?;
    let result = train(&ds, &episode, &eff.train)?;
    let ckpt = Checkpoint {
        header: CheckpointHeader {
            format_version: 1,
            dim: ds.dim(),
            proto_dim: eff.train.proto_dim,
            class_names: ds.header.class_names.clone(),
            template_id: ds.header.template_id.clone(),
            model_id: ds.header.model_id.clone(),
            config: eff.train.clone(),
            n_way: episode.n_way,
            k_shot: episode.k_shot,
            episode_seed: episode.seed,
            noise: episode.noise,
        },
        result,
    };
    write_checkpoint(&args.out, &ckpt)?;
    if let Some(last) = ckpt.result.loss_trace.last() {
        eprintln!("trained {} steps, final loss {:.6}", eff.train.steps, last.total);
    }
    mb.write(&manifest_path(&args.out), &eff)
}

/// An episode file must refer to the same records of this dataset.
fn check_episode(ep: &Episode, ds: &EmbeddingDataset) -> Result<()> {
    if ep.n_way != ds.n_classes() || ep.support.len() != ep.n_way {
        bail!("episode has {} classes, dataset has {}", ep.n_way, ds.n_classes());
    }
    for e in ep.entries() {
        let rec = ds
            .records
            .get(e.record)
            .filter(|r| r.id == e.id && r.split == Split::Train)
            .ok_or_else(|| anyhow!("episode record {} does not match the dataset", e.id))?;
        if e.label >= ep.n_way || rec.label != ep.original_labels.get(&e.id).copied() {
            bail!("episode labels for {} do not match the dataset", e.id);
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut mb = ManifestBuilder::new("eval");
    let ds = load_checked(&args.dataset, args.template.as_deref())?;
    mb.input(&args.dataset)?;
    let ckpt = read_checkpoint(&args.checkpoint)?;
    mb.input(&args.checkpoint)?;
    if ckpt.header.dim != ds.dim() || ckpt.header.class_names != ds.header.class_names {
        bail!(proto_verbalizer::Error::DimensionMismatch {
            context: "checkpoint vs dataset (dim / classes)".into(),
            expected: ckpt.header.dim,
            actual: ds.dim(),
        });
    }
    let proto = PrototypeScorer::new(&ckpt.result);
    let mut scorers: Vec<&dyn Scorer> = Vec::new();
    for s in &args.scorers {
        match s.as_str() {
            PROTO_SCORER => scorers.push(&proto),
            MANUAL_SCORER => scorers.push(&ManualScorer),
            other => return Err(UsageError(format!("unknown scorer {other:?}")).into()),
        }
    }
    let eval = evaluate(&ds, &scorers)?;
    let report = EvalReport::new(&eval, ckpt.header.episode_seed, &ds.header.template_id);
    write_json(&args.out, &report)?;
    if let Some(p) = &args.predictions {
        let mut text = String::new();
        for pred in &eval.predictions {
            text.push_str(&serde_json::to_string(pred)?);
            text.push('\n');
        }
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    eprintln!("accuracy {:.4} on {} test records", report.accuracy, report.n_test);
    mb.write(
        &manifest_path(&args.out),
        serde_json::json!({ "scorers": args.scorers, "template": args.template }),
    )
}

#[derive(Serialize)]
struct ProbeLine<'a> {
    class: usize,
    class_name: &'a str,
    tokens: &'a [proto_verbalizer::analysis::ProbeEntry],
}

fn cmd_probe(args: ProbeArgs) -> Result<()> {
    let mut mb = ManifestBuilder::new("probe");
    let ckpt = read_checkpoint(&args.checkpoint)?;
    mb.input(&args.checkpoint)?;
    let vocab = load_dataset(&args.vocab).with_context(|| format!("loading {}", args.vocab.display()))?;
    mb.input(&args.vocab)?;
    if vocab.dim() != ckpt.header.dim {
        bail!(proto_verbalizer::Error::DimensionMismatch {
            context: "probe file vs checkpoint".into(),
            expected: ckpt.header.dim,
            actual: vocab.dim(),
        });
    }
    let probes: Vec<_> = vocab.split(Split::VocabProbe).collect();
    let report = probe_vocabulary(&ckpt.result, &probes, args.top_k)?;
    let mut text = String::new();
    for (class, tokens) in report.classes.iter().enumerate() {
        let line = ProbeLine {
            class,
            class_name: &ckpt.header.class_names[class],
            tokens,
        };
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;
    mb.write(&manifest_path(&args.out), serde_json::json!({ "top_k": args.top_k }))
}

#[derive(Serialize)]
struct SimilarityReport {
    class_names: Vec<String>,
    checkpoints: usize,
    matrix: Vec<Vec<f64>>,
}

fn cmd_similarity(args: SimilarityArgs) -> Result<()> {
    let mut mb = ManifestBuilder::new("similarity");
    let probes = load_dataset(&args.probes).with_context(|| format!("loading {}", args.probes.display()))?;
    mb.input(&args.probes)?;
    let text = fs::read_to_string(&args.verbalizer).with_context(|| format!("reading {}", args.verbalizer.display()))?;
    let verbalizer: Verbalizer = serde_json::from_str(&text).context("parsing verbalizer")?;
    mb.input(&args.verbalizer)?;

    let mut matrices = Vec::new();
    let mut class_names: Option<Vec<String>> = None;
    for path in &args.checkpoint {
        let ckpt = read_checkpoint(path)?;
        mb.input(path)?;
        match &class_names {
            Some(names) if names != &ckpt.header.class_names => bail!("checkpoints disagree on class names"),
            _ => class_names = Some(ckpt.header.class_names.clone()),
        }
        let words = label_word_embeddings(&probes, &ckpt.header.class_names, &verbalizer)?;
        matrices.push(proto_manual_similarity(&ckpt.result, &words)?);
    }
    let report = SimilarityReport {
        class_names: class_names.unwrap_or_default(),
        checkpoints: matrices.len(),
        matrix: mean_matrix(&matrices).unwrap_or_default(),
    };
    write_json(&args.out, &report)?;
    mb.write(&manifest_path(&args.out), serde_json::json!({ "checkpoints": args.checkpoint }))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut mb = ManifestBuilder::new("synth");
    let mut spec: ClusterSpec = match &args.spec {
        Some(p) => {
            mb.input(p)?;
            serde_json::from_str(&fs::read_to_string(p)?).context("parsing cluster spec")?
        }
        None => ClusterSpec::default(),
    };
    if let Some(v) = args.n_way {
        spec.n_classes = v;
    }
    if let Some(v) = args.dim {
        spec.dim = v;
    }
    if let Some(v) = args.train_per_class {
        spec.train_per_class = v;
    }
    if let Some(v) = args.test_per_class {
        spec.test_per_class = v;
    }
    if let Some(v) = args.separation {
        spec.separation = v;
    }
    if let Some(v) = args.nuisance {
        spec.nuisance = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if spec.dim <= spec.n_classes {
        return Err(UsageError("dim must exceed the number of classes".into()).into());
    }
    write_dataset(&args.out, &synthetic_dataset(&spec)?)?;
    mb.write(&manifest_path(&args.out), &spec)
}
