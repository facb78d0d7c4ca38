use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Command;

/// Written next to every output so a run can be repeated exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub jobs: usize,
    /// Every flag of the command, defaults included.
    pub config: Command,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(config: &Command, jobs: usize, inputs: &[(&str, &Path)], outputs: Vec<PathBuf>) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|(role, path)| {
                Ok(InputDigest {
                    role: role.to_string(),
                    path: path.to_path_buf(),
                    sha256: sha256_file(path)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            command: config.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed(),
            jobs,
            config: config.clone(),
            inputs,
            outputs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Fails if any recorded input changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<()> {
        for input in &self.inputs {
            let now = sha256_file(&input.path)?;
            if now != input.sha256 {
                bail!(
                    "{} input {} changed since the run (sha256 {} != {})",
                    input.role,
                    input.path.display(),
                    now,
                    input.sha256
                );
            }
        }
        Ok(())
    }
}

/// `model.json` -> `model.json.manifest.json`
pub fn manifest_path(out: &Path) -> PathBuf {
    sibling(out, "manifest.json")
}

pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}
