//! Run manifests written beside every command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    pub crate_version: String,
    /// Absent for commands that take no config.
    pub config_sha256: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    /// Command-line choices that are not part of the config (solver, NFE).
    pub options: BTreeMap<String, String>,
    /// Checkpoints read by the command, keyed by role.
    pub inputs: BTreeMap<String, FileRecord>,
    /// Files written by the command, keyed by file name and stored relative
    /// to the output directory. Columns listed in
    /// `unhashed_columns` are left out of CSV hashes.
    pub outputs: BTreeMap<String, FileRecord>,
    pub unhashed_columns: Vec<String>,
    pub resolved_config: Option<RunConfig>,
}

impl Manifest {
    pub fn new(command: &str, config: Option<&RunConfig>) -> Self {
        let seeds = config
            .map(|c| {
                BTreeMap::from([
                    ("backbone".to_string(), c.backbone.seed),
                    ("sidenet".to_string(), c.sidenet.seed),
                    ("sampler".to_string(), c.sampler.seed),
                    ("bench".to_string(), c.bench.seed),
                ])
            })
            .unwrap_or_default();
        Self {
            manifest_version: MANIFEST_VERSION,
            command: command.to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: config.map(RunConfig::sha256),
            seeds,
            options: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            unhashed_columns: Vec::new(),
            resolved_config: config.cloned(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let sha256 = file_sha256(path)?;
        self.inputs.insert(
            role.to_string(),
            FileRecord {
                path: path.to_path_buf(),
                sha256,
            },
        );
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let sha256 = file_sha256(path)?;
        self.record_output(path, sha256);
        Ok(())
    }

    /// Records a CSV output hashed without the named column.
    pub fn add_csv_output_without(&mut self, path: &Path, column: &str) -> Result<()> {
        let sha256 = csv_sha256_without(path, column)?;
        if !self.unhashed_columns.iter().any(|c| c == column) {
            self.unhashed_columns.push(column.to_string());
        }
        self.record_output(path, sha256);
        Ok(())
    }

    fn record_output(&mut self, path: &Path, sha256: String) {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.outputs.insert(
            name.clone(),
            FileRecord {
                path: PathBuf::from(name),
                sha256,
            },
        );
    }

    /// Writes `manifest_<command>.json` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("manifest_{}.json", self.command.replace('-', "_")));
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// SHA-256 over the CSV records with one column removed, each record joined by
/// commas and terminated by a newline.
pub fn csv_sha256_without(path: &Path, column: &str) -> Result<String> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let skip = headers.iter().position(|h| h == column);
    let mut hasher = Sha256::new();
    let mut feed = |record: &csv::StringRecord| {
        let kept: Vec<&str> = record
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(_, f)| f)
            .collect();
        hasher.update(kept.join(","));
        hasher.update("\n");
    };
    feed(&headers);
    for record in reader.records() {
        feed(&record?);
    }
    Ok(hex::encode(hasher.finalize()))
}
