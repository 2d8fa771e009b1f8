//! Run manifest: config hash, versions, per-file checksums and check results.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Experiment, ExperimentConfig};
use crate::experiments::{run_experiment, ExperimentResult};
use crate::{write_json, HarnessError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    ThresholdFail,
    Error,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Ok => 0,
            RunStatus::ThresholdFail => 1,
            RunStatus::Error => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub experiments: Vec<ExperimentResult>,
    pub files: Vec<FileEntry>,
    pub status: RunStatus,
    pub error: Option<String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Json { path, source: e })
    }
}

pub fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Runs `experiments` in order into `out`, then writes the manifest. Module
/// errors stop the run and produce an error manifest listing the files
/// written so far; only I/O failures on the manifest itself are returned as
/// `Err`.
pub fn run(cfg: &ExperimentConfig, experiments: &[Experiment], out: &Path) -> Result<Manifest, HarnessError> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let mut files = vec![CONFIG_FILE.to_string()];
    let mut results = Vec::new();
    let mut error = None;
    for &experiment in experiments {
        match run_experiment(experiment, cfg, out) {
            Ok((result, written)) => {
                results.push(result);
                files.extend(written);
            }
            Err(e) => {
                error = Some(format!("{experiment}: {e}"));
                break;
            }
        }
    }
    let status = if error.is_some() {
        RunStatus::Error
    } else if results.iter().all(ExperimentResult::passed) {
        RunStatus::Ok
    } else {
        RunStatus::ThresholdFail
    };
    let mut entries = Vec::new();
    for path in files {
        let full = out.join(&path);
        if full.exists() {
            entries.push(FileEntry {
                sha256: sha256_file(&full)?,
                path,
            });
        }
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        experiments: results,
        files: entries,
        status,
        error,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
