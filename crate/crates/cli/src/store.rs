//! On-disk layout of a data directory.
//!
//! ```text
//! <data_dir>/corpus/documents.jsonl
//! <data_dir>/corpus/chunks.jsonl
//! <data_dir>/index/snapshot.drk
//! <data_dir>/audit/audit.jsonl
//! <data_dir>/reports/
//! ```

use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use groundwork::ingest::{Chunk, Document};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct DataLayout {
    pub root: PathBuf,
}

impl DataLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn documents(&self) -> PathBuf {
        self.root.join("corpus/documents.jsonl")
    }

    pub fn chunks(&self) -> PathBuf {
        self.root.join("corpus/chunks.jsonl")
    }

    pub fn snapshot(&self) -> PathBuf {
        self.root.join("index/snapshot.drk")
    }

    pub fn index_lock(&self) -> PathBuf {
        self.root.join("index/write.lock")
    }

    pub fn corpus_lock(&self) -> PathBuf {
        self.root.join("corpus/write.lock")
    }

    pub fn audit_log(&self) -> PathBuf {
        self.root.join("audit/audit.jsonl")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn create_dirs(&self) -> Result<()> {
        for sub in ["corpus", "index", "audit", "reports"] {
            let dir = self.root.join(sub);
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(())
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), n + 1))?);
    }
    Ok(out)
}

/// Writes all records to a temporary sibling and renames it into place.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(std::fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?);
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_documents(layout: &DataLayout) -> Result<Vec<Document>> {
    let path = layout.documents();
    if path.exists() {
        read_jsonl(&path)
    } else {
        Ok(Vec::new())
    }
}

pub fn load_chunks(layout: &DataLayout) -> Result<Vec<Chunk>> {
    let path = layout.chunks();
    anyhow::ensure!(path.exists(), "no chunk store at {}; run `ingest` first", path.display());
    read_jsonl(&path)
}
