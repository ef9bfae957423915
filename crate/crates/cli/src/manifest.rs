use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// What a command read, what it wrote, and how to run it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// argv after config expansion, without the program name.
    pub argv: Vec<String>,
    pub command: String,
    /// Resolved options, defaults included.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input path → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Artifact path → SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    /// SHA-256 over the sorted `path\0digest\n` lines of `artifacts`.
    pub output_hash: String,
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Runtime(format!("cannot hash {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn output_hash(artifacts: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (p, d) in artifacts {
        h.update(p.as_bytes());
        h.update([0]);
        h.update(d.as_bytes());
        h.update([b'\n']);
    }
    hex::encode(h.finalize())
}

fn digests(paths: &[PathBuf]) -> Result<BTreeMap<String, String>, CliError> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), file_sha256(p)?)))
        .collect()
}

/// Collects the run's context; `finish` hashes everything and writes it out.
pub struct ManifestBuilder {
    argv: Vec<String>,
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(argv: &[String], command: &str, config: &impl Serialize, seed: Option<u64>) -> Self {
        Self {
            argv: argv.to_vec(),
            command: command.to_string(),
            config: serde_json::to_value(config).expect("args serialize"),
            seed,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    pub fn artifact(&mut self, p: impl Into<PathBuf>) {
        self.artifacts.push(p.into());
    }

    pub fn finish(self, path: &Path) -> Result<RunManifest, CliError> {
        let artifacts = digests(&self.artifacts)?;
        let m = RunManifest {
            argv: self.argv,
            command: self.command,
            config: self.config,
            seed: self.seed,
            inputs: digests(&self.inputs)?,
            output_hash: output_hash(&artifacts),
            artifacts,
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
        serlab::dataio::write_file_bytes(path, text.as_bytes())?;
        Ok(m)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("--manifest: cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("--manifest: {}: {e}", path.display())))
}

/// Artifacts whose current bytes differ from the recorded digests.
pub fn changed_artifacts(m: &RunManifest) -> Result<Vec<String>, CliError> {
    let mut changed = Vec::new();
    for (p, d) in &m.artifacts {
        if file_sha256(Path::new(p))? != *d {
            changed.push(p.clone());
        }
    }
    Ok(changed)
}

/// Inputs whose current bytes differ from the recorded digests.
pub fn changed_inputs(m: &RunManifest) -> Vec<String> {
    m.inputs
        .iter()
        .filter(|(p, d)| file_sha256(Path::new(p)).ok().as_ref() != Some(*d))
        .map(|(p, _)| p.clone())
        .collect()
}
