//! Run manifest: seed, effective config and content hashes of every input
//! and output file.

use std::path::{Path, PathBuf};

use serde::Serialize;
use zonetrust::crypto::hash;

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// Contains wall-clock latency columns, so the hash varies across runs.
    pub has_latency: bool,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub config: &'a RunConfig,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

/// Paths under the manifest directory are recorded relative to it.
fn entry(dir: &Path, path: &Path, has_latency: bool) -> Result<FileEntry, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(FileEntry {
        path: path.strip_prefix(dir).unwrap_or(path).display().to_string(),
        sha256: hash(&bytes).to_hex(),
        bytes: bytes.len() as u64,
        has_latency,
    })
}

pub struct ManifestBuilder {
    inputs: Vec<(PathBuf, bool)>,
    outputs: Vec<(PathBuf, bool)>,
}

impl ManifestBuilder {
    pub fn new() -> Self {
        Self {
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: &Path) -> &mut Self {
        self.inputs.push((p.to_path_buf(), false));
        self
    }

    pub fn output(&mut self, p: &Path) -> &mut Self {
        self.outputs.push((p.to_path_buf(), false));
        self
    }

    pub fn timed_output(&mut self, p: &Path) -> &mut Self {
        self.outputs.push((p.to_path_buf(), true));
        self
    }

    /// Writes `<dir>/<command>.manifest.json` and returns its path.
    pub fn write(&self, dir: &Path, command: &str, cfg: &RunConfig) -> Result<PathBuf, CliError> {
        let collect = |v: &[(PathBuf, bool)]| v.iter().map(|(p, l)| entry(dir, p, *l)).collect::<Result<Vec<_>, _>>();
        let m = Manifest {
            command,
            seed: cfg.seed,
            config: cfg,
            inputs: collect(&self.inputs)?,
            outputs: collect(&self.outputs)?,
        };
        let path = dir.join(format!("{command}.manifest.json"));
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
