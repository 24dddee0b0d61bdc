use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance record written next to every command's output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub tool_version: String,
    pub wall_time_secs: f64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
    inputs: BTreeMap<String, String>,
    extra: BTreeMap<String, serde_json::Value>,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
            inputs: BTreeMap::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<String> {
        let digest = file_digest(path)?;
        self.inputs.insert(path.display().to_string(), digest.clone());
        Ok(digest)
    }

    pub fn extra(&mut self, key: &str, value: impl Serialize) {
        self.extra
            .insert(key.to_string(), serde_json::to_value(value).expect("serializable"));
    }

    pub fn write(self, path: &Path, config: impl Serialize) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            config: serde_json::to_value(config)?,
            inputs: self.inputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            extra: self.extra,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// SHA-256 over the raw file bytes, hex encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn text_digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}
