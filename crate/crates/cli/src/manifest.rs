//! Run manifests: what ran, on which inputs, producing which bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

/// Collected while a command runs; written last. Carries no timestamps so
/// identical runs give identical manifests.
#[derive(Serialize)]
pub struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: Option<u64>,
    config_sha256: String,
    config: serde_json::Value,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
    notes: BTreeMap<String, serde_json::Value>,
    #[serde(skip)]
    dir: PathBuf,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &'static str, seed: Option<u64>, config: &C, dir: &Path) -> anyhow::Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config_sha256: sha256_hex(serde_json::to_string(&config)?.as_bytes()),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: BTreeMap::new(),
            dir: dir.to_path_buf(),
        })
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        self.inputs.push(FileEntry { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) -> anyhow::Result<()> {
        self.notes.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    /// Writes `bytes` to `name` inside the output directory and records it.
    pub fn emit(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(FileEntry { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn finish(self) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
