//! Run manifests: the resolved config, every seed, the inputs a stage
//! consumed and the files it produced, each with its SHA-256. No timestamps,
//! so identical runs write identical manifests.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use senti_core::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    /// Files this stage read, e.g. the checkpoint that seeded it.
    pub inputs: Vec<FileEntry>,
    /// Files this stage wrote, relative to its output directory.
    pub artifacts: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn entry(path: &Path, label: String) -> Result<FileEntry> {
    Ok(FileEntry {
        path: label,
        sha256: sha256_file(path)?,
    })
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Result<Self> {
        let snapshot = serde_json::to_vec(config)?;
        let digest = hex::encode(Sha256::digest(&snapshot));
        let seeds = BTreeMap::from([
            ("seed".to_string(), config.seed),
            ("env".to_string(), config.env.seed),
            ("teacher".to_string(), config.teacher_seed()),
            ("init".to_string(), config.init_seed()),
            ("sft".to_string(), config.sft.seed),
            ("grpo".to_string(), config.grpo.seed),
            ("test".to_string(), config.test_env().seed),
            ("shift".to_string(), config.shift_env().seed),
        ]);
        Ok(Self {
            run_id: format!("{command}-{}", &digest[..12]),
            command: command.to_string(),
            config: config.clone(),
            seeds,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(entry(path, path.display().to_string())?);
        Ok(())
    }

    /// Records every named file inside `dir`.
    pub fn add_artifacts(&mut self, dir: &Path, names: &[String]) -> Result<()> {
        for n in names {
            self.artifacts.push(entry(&dir.join(n), n.clone())?);
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}
