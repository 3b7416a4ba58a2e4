//! Run manifests: enough to prove two runs were the same experiment.
//!
//! A manifest holds the subcommand name, a SHA-256 over the *effective*
//! config (after the `--seed` override), the library version, and every
//! derived seed. Runs with equal manifests produce equal outputs; nothing
//! time- or machine-dependent is recorded.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::report::write_json;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub seeds: BTreeMap<String, u64>,
}

/// Hashes the effective config's canonical JSON (sorted object keys).
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    // serde_json's default Map is sorted, so value → string is canonical
    // for a given key set.
    let value = serde_json::to_value(config).context("canonicalizing config")?;
    let bytes = serde_json::to_vec(&value).context("serializing config")?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Writes `manifest.json` into the output directory.
pub fn write_manifest<T: Serialize>(
    out_dir: &Path,
    command: &str,
    effective_config: &T,
    seeds: &BTreeMap<String, u64>,
) -> Result<()> {
    let manifest = Manifest {
        command: command.to_string(),
        config_hash: config_hash(effective_config)?,
        version: rfeat::VERSION.to_string(),
        seeds: seeds.clone(),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)
}
