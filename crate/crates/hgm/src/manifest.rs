//! Run metadata written next to every set of outputs.
//!
//! `manifest.json` holds everything needed to repeat a run and the digests
//! of what it produced; wall-clock timings go to `timings.json` so that two
//! runs of the same manifest leave byte-identical directories apart from
//! that one file.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{write_json, IoError, IoResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Path as given on the command line, or the file name for outputs.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Every option of the subcommand after defaults were applied.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub generator: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
    pub total_seconds: f64,
}

impl Timings {
    pub fn new() -> Self {
        Self {
            stages: Vec::new(),
            total_seconds: 0.0,
        }
    }

    pub fn record(&mut self, stage: &str, elapsed: Duration) {
        let s = elapsed.as_secs_f64();
        self.stages.push((stage.to_string(), s));
        self.total_seconds += s;
    }
}

impl Default for Timings {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path, label: &str) -> IoResult<FileDigest> {
    let bytes = std::fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(FileDigest {
        path: label.to_string(),
        bytes: bytes.len() as u64,
        sha256: sha256_hex(&bytes),
    })
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            seeds,
            generator: hgm_core::rng::GENERATOR.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> IoResult<()> {
        let d = digest_file(path, &path.display().to_string())?;
        self.inputs.push(d);
        Ok(())
    }

    /// Digests the named files inside `dir`, in the given order.
    pub fn add_outputs(&mut self, dir: &Path, names: &[String]) -> IoResult<()> {
        for name in names {
            let d = digest_file(&dir.join(name), name)?;
            self.outputs.push(d);
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> IoResult<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

pub fn write_timings(dir: &Path, t: &Timings) -> IoResult<()> {
    write_json(&dir.join(TIMINGS_FILE), t)
}
