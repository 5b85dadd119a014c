//! Static configuration loading. A run is configured by one TOML file (or the
//! `config` field of a previously written manifest); the only environment
//! override is the output root.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use senti_core::ExperimentConfig;

pub const OUTPUT_ROOT_VAR: &str = "SENTI_OUTPUT_ROOT";

/// Reads a config file. `.json` files are treated as run manifests and their
/// `config` snapshot is used; anything else is parsed as TOML. `None` yields
/// the defaults.
pub fn load(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        let Some(c) = v.get("config") else {
            bail!("{} has no `config` field", path.display());
        };
        serde_json::from_value(c.clone()).with_context(|| format!("config snapshot in {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
    };
    Ok(cfg)
}

/// Applies command-line overrides, derives stage seeds and validates.
pub fn resolve(mut cfg: ExperimentConfig, seed: Option<u64>, free_decoding: bool) -> Result<ExperimentConfig> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.model.free_decoding |= free_decoding;
    let cfg = cfg.resolve();
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

/// Relative output paths live under the output root when it is set.
pub fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if p.is_relative() && !root.is_empty() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}
