//! Hybrid chunk store: BM25 inverted index plus HNSW vector graph, with the
//! raw chunk text kept alongside for citation.
//!
//! Searches take `&self` and the type is `Sync`, so any number of readers can
//! share one index; mutation needs `&mut self` (wrap in a `RwLock` when
//! readers and a writer coexist).

pub mod bm25;
pub mod hnsw;
pub mod snapshot;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bm25::{normalize_query, Bm25Index, Bm25Params};
pub use hnsw::{HnswGraph, HnswParams};

use crate::ingest::{content_terms, Chunk};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("vector has {found} dimensions, index expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("chunk {0} is already indexed")]
    DuplicateChunkId(String),
    #[error("unknown chunk {0}")]
    UnknownChunk(String),
    #[error("vector must be finite and non-zero")]
    InvalidVector,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported snapshot version: {0}")]
    VersionMismatch(String),
    #[error("snapshot checksum mismatch")]
    ChecksumMismatch,
    #[error("malformed snapshot: {0}")]
    Malformed(String),
}

/// Dense embedding. Values are finite; vectors produced by the providers and
/// stored in the index are L2-normalised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        hnsw::dot(&self.0, &self.0).sqrt()
    }

    /// Unit-length copy; `None` for zero or non-finite vectors.
    pub fn normalized(&self) -> Option<EmbeddingVector> {
        let n = self.norm();
        if !n.is_finite() || n == 0.0 {
            return None;
        }
        Some(EmbeddingVector(self.0.iter().map(|x| x / n).collect()))
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return 0.0;
        }
        (hnsw::dot(&self.0, &other.0) / denom).clamp(-1.0, 1.0)
    }
}

impl From<Vec<f64>> for EmbeddingVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: String,
    pub score: f64,
}

/// Descending score, ascending chunk id on ties.
pub(crate) fn rank_order(a: &ScoredChunk, b: &ScoredChunk) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexParams {
    #[serde(default)]
    pub bm25: Bm25Params,
    #[serde(default)]
    pub hnsw: HnswParams,
}

#[derive(Debug, Clone)]
pub struct HybridIndex {
    pub(crate) bm25_params: Bm25Params,
    pub(crate) dim: Option<usize>,
    pub(crate) chunks: Vec<Chunk>,
    pub(crate) by_id: HashMap<String, u32>,
    pub(crate) bm25: Bm25Index,
    pub(crate) hnsw: HnswGraph,
}

impl HybridIndex {
    pub fn new(params: IndexParams) -> Result<Self, IndexError> {
        params.bm25.validate()?;
        params.hnsw.validate()?;
        Ok(Self {
            bm25_params: params.bm25,
            dim: None,
            chunks: Vec::new(),
            by_id: HashMap::new(),
            bm25: Bm25Index::new(),
            hnsw: HnswGraph::new(params.hnsw, 0),
        })
    }

    pub(crate) fn from_parts(
        bm25_params: Bm25Params,
        dim: Option<usize>,
        chunks: Vec<Chunk>,
        bm25: Bm25Index,
        hnsw: HnswGraph,
    ) -> Result<Self, IndexError> {
        bm25_params.validate()?;
        hnsw.params().validate()?;
        let n = chunks.len();
        let consistent = bm25.num_docs() == n
            && hnsw.len() == n
            && hnsw.vectors.len() == n * hnsw.dim()
            && hnsw.entry.is_some() == (n > 0)
            && hnsw.entry.is_none_or(|e| (e as usize) < n)
            && hnsw.links.iter().all(|layers| !layers.is_empty() && layers.iter().flatten().all(|&nb| (nb as usize) < n))
            && bm25.postings.values().flatten().all(|p| (p.doc as usize) < n);
        if !consistent {
            return Err(IndexError::Malformed("sections disagree on corpus size".into()));
        }
        let mut by_id = HashMap::with_capacity(n);
        for (i, c) in chunks.iter().enumerate() {
            if by_id.insert(c.chunk_id.clone(), i as u32).is_some() {
                return Err(IndexError::DuplicateChunkId(c.chunk_id.clone()));
            }
        }
        Ok(Self { bm25_params, dim, chunks, by_id, bm25, hnsw })
    }

    pub fn params(&self) -> IndexParams {
        IndexParams { bm25: self.bm25_params, hnsw: *self.hnsw.params() }
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn get(&self, chunk_id: &str) -> Option<&Chunk> {
        self.by_id.get(chunk_id).map(|&i| &self.chunks[i as usize])
    }

    pub fn bm25_index(&self) -> &Bm25Index {
        &self.bm25
    }

    pub fn graph(&self) -> &HnswGraph {
        &self.hnsw
    }

    /// Adds a chunk with its embedding. The first insertion fixes the index
    /// dimension; the vector is normalised before it enters the graph.
    pub fn add(&mut self, chunk: Chunk, vector: &EmbeddingVector) -> Result<(), IndexError> {
        if let Some(expected) = self.dim {
            if vector.dim() != expected {
                return Err(IndexError::DimensionMismatch { expected, found: vector.dim() });
            }
        }
        if self.by_id.contains_key(&chunk.chunk_id) {
            return Err(IndexError::DuplicateChunkId(chunk.chunk_id));
        }
        let unit = vector.normalized().ok_or(IndexError::InvalidVector)?;
        if self.dim.is_none() {
            self.dim = Some(vector.dim());
            self.hnsw.dim = vector.dim();
        }
        let id = self.bm25.add(&content_terms(&chunk.text));
        let node = self.hnsw.insert(unit.as_slice());
        debug_assert_eq!(id, node);
        self.by_id.insert(chunk.chunk_id.clone(), id);
        self.chunks.push(chunk);
        Ok(())
    }

    pub fn bm25_score<S: AsRef<str>>(&self, query_terms: &[S], chunk_id: &str) -> Result<f64, IndexError> {
        let &id = self.by_id.get(chunk_id).ok_or_else(|| IndexError::UnknownChunk(chunk_id.to_string()))?;
        Ok(self.bm25.score(&self.bm25_params, &normalize_query(query_terms), id))
    }

    /// Top `k` chunks by BM25, matching exhaustive scoring exactly. Chunks
    /// sharing no term with the query are not returned.
    pub fn bm25_search<S: AsRef<str>>(&self, query_terms: &[S], k: usize) -> Vec<ScoredChunk> {
        let terms = normalize_query(query_terms);
        let mut hits: Vec<ScoredChunk> = self
            .bm25
            .accumulate(&self.bm25_params, &terms)
            .into_iter()
            .map(|(id, score)| ScoredChunk { chunk_id: self.chunks[id as usize].chunk_id.clone(), score })
            .collect();
        hits.sort_by(rank_order);
        hits.truncate(k);
        hits
    }

    /// Approximate nearest chunks by cosine similarity.
    pub fn hnsw_search(&self, query: &EmbeddingVector, k: usize, ef_search: usize) -> Result<Vec<ScoredChunk>, IndexError> {
        let Some(dim) = self.dim else { return Ok(Vec::new()) };
        if query.dim() != dim {
            return Err(IndexError::DimensionMismatch { expected: dim, found: query.dim() });
        }
        let unit = query.normalized().ok_or(IndexError::InvalidVector)?;
        let mut hits: Vec<ScoredChunk> = self
            .hnsw
            .search(unit.as_slice(), k, ef_search.max(k))
            .into_iter()
            .map(|(id, sim)| ScoredChunk { chunk_id: self.chunks[id as usize].chunk_id.clone(), score: sim.clamp(-1.0, 1.0) })
            .collect();
        hits.sort_by(rank_order);
        Ok(hits)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        snapshot::save(self, path)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        snapshot::load(path)
    }
}
