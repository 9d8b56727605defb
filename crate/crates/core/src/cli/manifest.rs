use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{LoadedConfig, Origin, RunConfig};
use crate::error::{Error, Result};

/// Record of one command run. Holds no timestamps or absolute paths, so two
/// runs with the same inputs write the same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub provenance: BTreeMap<String, Origin>,
    /// sha256 per input file, keyed by path relative to the config.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub oracle_calls: u64,
    pub oracle_cost: f64,
    pub status: String,
    /// Small command-specific numbers worth keeping next to the hashes.
    #[serde(default)]
    pub summary: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hashes files, or every file under a directory in path order.
fn hash_into(cfg: &LoadedConfig, path: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for e in entries {
            hash_into(cfg, &e, out)?;
        }
    } else {
        out.insert(cfg.display(path), sha256_file(path)?);
    }
    Ok(())
}

pub struct ManifestBuilder<'a> {
    cfg: &'a LoadedConfig,
    command: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'a> ManifestBuilder<'a> {
    pub fn new(cfg: &'a LoadedConfig, command: &'static str) -> Self {
        ManifestBuilder {
            cfg,
            command,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        hash_into(self.cfg, path, &mut self.inputs)
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        hash_into(self.cfg, path, &mut self.outputs)
    }

    /// Writes `manifests/<command>.json` under the run directory.
    pub fn finish(
        self,
        oracle_calls: u64,
        oracle_cost: f64,
        status: &str,
        summary: serde_json::Value,
    ) -> Result<Manifest> {
        let manifest = Manifest {
            command: self.command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: self.cfg.config.seed,
            config: self.cfg.config.clone(),
            provenance: self.cfg.provenance.clone(),
            inputs: self.inputs,
            outputs: self.outputs,
            oracle_calls,
            oracle_cost,
            status: status.to_owned(),
            summary,
        };
        let path = manifest_dir(self.cfg).join(format!("{}.json", self.command));
        write_json(&path, &manifest)?;
        Ok(manifest)
    }
}

pub fn manifest_dir(cfg: &LoadedConfig) -> std::path::PathBuf {
    cfg.resolve(&cfg.config.paths.run_dir).join("manifests")
}

/// Every manifest in the run directory, by command name.
pub fn read_manifests(cfg: &LoadedConfig) -> Result<Vec<Manifest>> {
    let dir = manifest_dir(cfg);
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidData(format!("{}: {e}", p.display())))
        })
        .collect()
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Invariant(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
