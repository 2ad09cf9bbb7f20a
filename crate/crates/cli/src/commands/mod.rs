pub mod decode;
pub mod eval;
pub mod inspect;
pub mod synth;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};
use synsum_core::{load_corpus, Document};

pub(crate) fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}
