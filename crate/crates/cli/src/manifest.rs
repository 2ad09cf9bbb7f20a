use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Git-style object hash: SHA-256 over `blob <len>\0<content>`.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(blob_hash(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputRef {
    pub path: PathBuf,
    pub blob_sha256: String,
}

/// Everything needed to rerun a subcommand. Holds no timestamps or host
/// details, so equal runs produce equal manifests.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<&'static str, InputRef>,
    pub outputs: BTreeMap<&'static str, PathBuf>,
}

impl RunManifest {
    pub fn new(subcommand: &'static str, seed: Option<u64>, config: impl Serialize) -> Result<Self> {
        Ok(RunManifest {
            subcommand,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, role: &'static str, path: &Path) -> Result<&mut Self> {
        let blob_sha256 = file_hash(path)?;
        self.inputs.insert(
            role,
            InputRef {
                path: path.to_path_buf(),
                blob_sha256,
            },
        );
        Ok(self)
    }

    /// Records content that is produced in memory before it reaches disk.
    pub fn input_bytes(&mut self, role: &'static str, path: &Path, content: &[u8]) -> &mut Self {
        self.inputs.insert(
            role,
            InputRef {
                path: path.to_path_buf(),
                blob_sha256: blob_hash(content),
            },
        );
        self
    }

    pub fn output(&mut self, role: &'static str, path: &Path) -> &mut Self {
        self.outputs.insert(role, path.to_path_buf());
        self
    }

    /// Writes to `explicit`, or else to `default`. Returns the path used.
    pub fn write(&self, explicit: Option<&Path>, default: PathBuf) -> Result<PathBuf> {
        let path = explicit.map_or(default, Path::to_path_buf);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(path)
    }
}

/// `<path>.<suffix>`, keeping the original extension.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    s.into()
}
