//! Per-run provenance: what ran, with which configuration, on which bytes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    /// Seconds per phase, in execution order, plus `total`.
    pub timings: Vec<(String, f64)>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Collects phase timings while a command runs.
pub struct Recorder {
    command: String,
    started: Instant,
    phase: Instant,
    timings: Vec<(String, f64)>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
    config: Value,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        let now = Instant::now();
        Self {
            command: command.to_string(),
            started: now,
            phase: now,
            timings: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            config: Value::Null,
        }
    }

    /// Closes the current phase under `name`.
    pub fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.timings.push((name.to_string(), (now - self.phase).as_secs_f64()));
        self.phase = now;
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn config(&mut self, config: impl Serialize) {
        self.config = serde_json::to_value(config).unwrap_or(Value::Null);
    }

    pub fn finish(mut self, path: &Path) -> Result<(), CliError> {
        self.timings
            .push(("total".into(), self.started.elapsed().as_secs_f64()));
        let hash_all = |paths: &[PathBuf]| -> Result<Vec<FileHash>, CliError> {
            paths
                .iter()
                .map(|p| {
                    Ok(FileHash {
                        path: p.clone(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect()
        };
        let manifest = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config: self.config,
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
            timings: self.timings,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(path, json + "\n").map_err(|e| CliError::io(path, e))
    }
}

/// `out.bclt` -> `out.bclt.run.json`.
pub fn default_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}
