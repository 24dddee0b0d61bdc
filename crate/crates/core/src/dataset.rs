//! Exported embedding datasets: NDJSON reading, validation and writing.
//!
//! A dataset file is newline-delimited JSON. Line 1 is a [`DatasetHeader`];
//! every following non-empty line is one [`EmbeddingRecord`]. Embeddings are
//! 32-bit floats written in shortest round-trip decimal form. Paths ending in
//! `.gz` are read and written gzip-compressed.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub dim: usize,
    pub class_names: Vec<String>,
    pub template_id: String,
    pub model_id: String,
}

impl DatasetHeader {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.format_version != FORMAT_VERSION {
            return Err(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            ));
        }
        if self.dim == 0 {
            return Err("dim must be at least 1".into());
        }
        if self.class_names.is_empty() {
            return Err("class_names must be non-empty".into());
        }
        let mut seen = HashSet::new();
        for name in &self.class_names {
            if !seen.insert(name.as_str()) {
                return Err(format!("duplicate class name {name:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    VocabProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    pub embedding: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_word_logprobs: Option<Vec<Vec<f64>>>,
}

impl EmbeddingRecord {
    pub fn embedding_f64(&self) -> Vec<f64> {
        self.embedding.iter().map(|&x| x as f64).collect()
    }

    fn check(&self, header: &DatasetHeader) -> Result<(), RecordViolation> {
        if self.embedding.len() != header.dim {
            return Err(RecordViolation::Dimension {
                expected: header.dim,
                actual: self.embedding.len(),
            });
        }
        if let Some(pos) = self.embedding.iter().position(|x| !x.is_finite()) {
            return Err(RecordViolation::Other(format!(
                "embedding entry {pos} is not a finite 32-bit float"
            )));
        }
        match (self.split, self.label) {
            (Split::VocabProbe, Some(_)) => {
                return Err(RecordViolation::Other(
                    "vocab_probe records must not carry a label".into(),
                ))
            }
            (Split::Train | Split::Test, None) => {
                return Err(RecordViolation::Other(
                    "train/test records must carry a label".into(),
                ))
            }
            (_, Some(label)) if label >= header.n_classes() => {
                return Err(RecordViolation::Other(format!(
                    "label {label} out of range for {} classes",
                    header.n_classes()
                )))
            }
            _ => {}
        }
        if self.token.is_some() && self.split != Split::VocabProbe {
            return Err(RecordViolation::Other(
                "token is only allowed on vocab_probe records".into(),
            ));
        }
        if let Some(lp) = &self.label_word_logprobs {
            if lp.len() != header.n_classes() {
                return Err(RecordViolation::Other(format!(
                    "label_word_logprobs has {} classes, expected {}",
                    lp.len(),
                    header.n_classes()
                )));
            }
            for (class, words) in lp.iter().enumerate() {
                if words.is_empty() {
                    return Err(RecordViolation::Other(format!(
                        "label_word_logprobs for class {class} is empty"
                    )));
                }
                if words.iter().any(|&x| !x.is_finite() || x > 0.0) {
                    return Err(RecordViolation::Other(format!(
                        "label_word_logprobs for class {class} must be finite and <= 0"
                    )));
                }
            }
        }
        Ok(())
    }
}

enum RecordViolation {
    Dimension { expected: usize, actual: usize },
    Other(String),
}

/// Header plus records, immutable after load.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    pub header: DatasetHeader,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingDataset {
    /// Builds a dataset in memory, applying the same checks as the loader.
    pub fn new(header: DatasetHeader, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut lines = vec![serde_json::to_string(&header).expect("header serializes")];
        for r in &records {
            lines.push(serde_json::to_string(r).expect("record serializes"));
        }
        let report = validate_reader(lines.join("\n").as_bytes());
        match report.diagnostics.into_iter().next() {
            Some(d) => Err(d.into_error()),
            None => Ok(Self { header, records }),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.header.n_classes()
    }

    pub fn dim(&self) -> usize {
        self.header.dim
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Per-class record counts for a labelled split.
    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for r in self.split(split) {
            if let Some(label) = r.label {
                counts[label] += 1;
            }
        }
        counts
    }

    /// Record indices of the train split grouped by class, in file order.
    pub fn train_indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_classes()];
        for (i, r) in self.records.iter().enumerate() {
            if let (Split::Train, Some(label)) = (r.split, r.label) {
                out[label].push(i);
            }
        }
        out
    }

    pub fn record(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

/// One validation finding, tied to a 1-based line number.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
    pub message: String,
    #[serde(skip)]
    dimension: Option<(usize, usize)>,
}

impl Diagnostic {
    fn new(line: usize, record_id: Option<String>, message: impl Into<String>) -> Self {
        Self {
            line,
            record_id,
            message: message.into(),
            dimension: None,
        }
    }

    fn into_error(self) -> Error {
        match (self.dimension, self.record_id) {
            (Some((expected, actual)), Some(id)) => Error::DimensionMismatch {
                context: format!("line {}: record {id:?} embedding", self.line),
                expected,
                actual,
            },
            _ => Error::format(self.line, self.message),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.record_id {
            Some(id) => write!(f, "line {}: record {id:?}: {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Debug, Default)]
pub struct ValidationReport {
    pub dataset: Option<EmbeddingDataset>,
    pub diagnostics: Vec<Diagnostic>,
    pub n_records: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

fn open_reader(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if is_gzip_path(path) {
        Ok(Box::new(MultiGzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

pub(crate) fn is_gzip_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Scans a whole file and collects every violation instead of stopping at
/// the first. I/O failures are returned as `Err`; format problems are
/// diagnostics.
pub fn validate_file(path: impl AsRef<Path>) -> Result<ValidationReport> {
    let path = path.as_ref();
    let reader = open_reader(path)?;
    let mut buf = Vec::new();
    BufReader::new(reader)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    Ok(validate_reader(buf.as_slice()))
}

pub fn validate_reader(reader: impl BufRead) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut header: Option<DatasetHeader> = None;
    let mut records = Vec::new();
    let mut ids: HashSet<String> = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                report
                    .diagnostics
                    .push(Diagnostic::new(lineno, None, format!("unreadable line: {e}")));
                break;
            }
        };
        if lineno == 1 {
            match serde_json::from_str::<DatasetHeader>(&line) {
                Ok(h) => match h.check() {
                    Ok(()) => header = Some(h),
                    Err(msg) => report
                        .diagnostics
                        .push(Diagnostic::new(1, None, format!("malformed header: {msg}"))),
                },
                Err(e) => report
                    .diagnostics
                    .push(Diagnostic::new(1, None, format!("malformed header: {e}"))),
            }
            if header.is_none() {
                return report;
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let header = header.as_ref().expect("header parsed");
        let record: EmbeddingRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report
                    .diagnostics
                    .push(Diagnostic::new(lineno, None, format!("malformed record: {e}")));
                continue;
            }
        };
        report.n_records += 1;
        if let Err(v) = record.check(header) {
            let d = match v {
                RecordViolation::Dimension { expected, actual } => Diagnostic {
                    dimension: Some((expected, actual)),
                    ..Diagnostic::new(
                        lineno,
                        Some(record.id.clone()),
                        format!("embedding has {actual} entries, header dim is {expected}"),
                    )
                },
                RecordViolation::Other(msg) => Diagnostic::new(lineno, Some(record.id.clone()), msg),
            };
            report.diagnostics.push(d);
            continue;
        }
        if !ids.insert(record.id.clone()) {
            report.diagnostics.push(Diagnostic::new(
                lineno,
                Some(record.id.clone()),
                "duplicate record id",
            ));
            continue;
        }
        records.push(record);
    }

    match header {
        None if report.diagnostics.is_empty() => report
            .diagnostics
            .push(Diagnostic::new(1, None, "missing header line")),
        Some(header) if report.diagnostics.is_empty() => {
            report.dataset = Some(EmbeddingDataset { header, records });
        }
        _ => {}
    }
    report
}

/// Loads and validates a dataset, failing on the first violation.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    let report = validate_file(path)?;
    match report.diagnostics.into_iter().next() {
        Some(d) => Err(d.into_error()),
        None => Ok(report.dataset.expect("clean report carries dataset")),
    }
}

pub fn write_dataset_to(mut writer: impl Write, dataset: &EmbeddingDataset) -> std::io::Result<()> {
    serde_json::to_writer(&mut writer, &dataset.header)?;
    writer.write_all(b"\n")?;
    for r in &dataset.records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &EmbeddingDataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let res = if is_gzip_path(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        write_dataset_to(&mut enc, dataset).and_then(|_| enc.finish().map(|_| ()))
    } else {
        write_dataset_to(BufWriter::new(file), dataset)
    };
    res.map_err(|e| Error::io(path, e))
}

/// Per-class label-word groups, keyed by class name. Used to map probe
/// tokens back to classes.
pub type Verbalizer = BTreeMap<String, Vec<String>>;
