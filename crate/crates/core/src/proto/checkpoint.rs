//! NDJSON checkpoints: one header line, then encoder rows, prototypes and the
//! loss trace, each line tagged by `kind`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LossRecord, PrototypeSet, ProjectionEncoder, TrainConfig, TrainResult};
use crate::episode::NoiseSpec;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dim: usize,
    pub proto_dim: usize,
    pub class_names: Vec<String>,
    pub template_id: String,
    pub model_id: String,
    pub config: TrainConfig,
    pub n_way: usize,
    pub k_shot: usize,
    pub episode_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub result: TrainResult,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(CheckpointHeader),
    WeightRow { row: usize, values: Vec<f64> },
    Prototype { class: usize, values: Vec<f64> },
    Loss(LossRecord),
}

pub fn checkpoint_to_string(ckpt: &Checkpoint) -> String {
    let mut lines = vec![Line::Header(ckpt.header.clone())];
    let w = ckpt.result.encoder.weight();
    lines.extend((0..w.rows()).map(|row| Line::WeightRow {
        row,
        values: w.row(row).to_vec(),
    }));
    lines.extend(
        ckpt.result
            .prototypes
            .as_slice()
            .iter()
            .enumerate()
            .map(|(class, p)| Line::Prototype {
                class,
                values: p.clone(),
            }),
    );
    lines.extend(ckpt.result.loss_trace.iter().copied().map(Line::Loss));
    let mut out = String::new();
    for l in &lines {
        out.push_str(&serde_json::to_string(l).expect("checkpoint line serializes"));
        out.push('\n');
    }
    out
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_string(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut header = None;
    let mut rows = Vec::new();
    let mut protos = Vec::new();
    let mut trace = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(raw)
            .map_err(|e| Error::format(lineno, format!("malformed checkpoint line: {e}")))?;
        match (line, lineno) {
            (Line::Header(h), 1) => header = Some(h),
            (Line::Header(_), _) => return Err(Error::format(lineno, "header must be the first line")),
            (_, _) if header.is_none() => return Err(Error::format(1, "missing checkpoint header")),
            (Line::WeightRow { row, values }, _) => {
                if row != rows.len() {
                    return Err(Error::format(lineno, format!("weight row {row} out of order")));
                }
                rows.push(values);
            }
            (Line::Prototype { class, values }, _) => {
                if class != protos.len() {
                    return Err(Error::format(lineno, format!("prototype {class} out of order")));
                }
                protos.push(values);
            }
            (Line::Loss(rec), _) => trace.push(rec),
        }
    }
    let header: CheckpointHeader = header.ok_or_else(|| Error::format(1, "missing checkpoint header"))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::format(1, format!("unsupported checkpoint version {}", header.format_version)));
    }
    let weight = Matrix::from_rows(rows)?;
    if weight.rows() != header.proto_dim || weight.cols() != header.dim {
        return Err(Error::DimensionMismatch {
            context: "checkpoint encoder shape".into(),
            expected: header.proto_dim * header.dim,
            actual: weight.rows() * weight.cols(),
        });
    }
    if protos.len() != header.class_names.len() {
        return Err(Error::DimensionMismatch {
            context: "checkpoint prototype count".into(),
            expected: header.class_names.len(),
            actual: protos.len(),
        });
    }
    let result = TrainResult {
        encoder: ProjectionEncoder::new(weight)?,
        prototypes: PrototypeSet::new(protos)?,
        loss_trace: trace,
    };
    if result.prototypes.dim() != header.proto_dim {
        return Err(Error::DimensionMismatch {
            context: "checkpoint prototype dim".into(),
            expected: header.proto_dim,
            actual: result.prototypes.dim(),
        });
    }
    Ok(Checkpoint { header, result })
}
