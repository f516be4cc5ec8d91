//! Query refinement, hybrid candidate retrieval with rank fusion, and
//! reranking down to the generation context.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation::default_texts;
use crate::index::{HybridIndex, IndexError, ScoredChunk};
use crate::ingest::content_terms;
use crate::providers::{embed_batch, llm_complete, rerank_call, ChatModel, Embedder, ProviderError, Reranker};

/// Largest document list sent to a reranker in one call.
pub const RERANK_DOC_LIMIT: usize = 1000;
pub const MAX_EXPANSION_TERMS: usize = 5;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("index is empty")]
    EmptyIndex,
    #[error("no candidates to rerank")]
    NoCandidates,
    #[error("invalid fusion policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinedQuery {
    pub original: String,
    pub refined: String,
    pub expansion_terms: Vec<String>,
    /// Set when the model call failed or its reply was unusable and the
    /// original query was used as is.
    pub fallback: bool,
}

impl RefinedQuery {
    pub fn identity(raw: &str, fallback: bool) -> Self {
        Self { original: raw.to_string(), refined: raw.trim().to_string(), expansion_terms: Vec::new(), fallback }
    }

    /// Lexical query terms: the refined query plus expansion terms.
    pub fn bm25_terms(&self) -> Vec<String> {
        let mut terms = content_terms(&self.refined);
        for t in &self.expansion_terms {
            terms.extend(content_terms(t));
        }
        terms
    }
}

fn strip_list_prefix(line: &str) -> &str {
    let line = line.trim();
    let line = line.strip_prefix("- ").or_else(|| line.strip_prefix("* ")).unwrap_or(line);
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = line[digits..].strip_prefix(". ").or_else(|| line[digits..].strip_prefix(") ")) {
            return rest.trim();
        }
    }
    line.trim()
}

/// Reads a refinement reply: the first non-blank line is the rewritten query,
/// the following non-blank lines (at most five) are expansion terms.
pub fn parse_refinement(raw_query: &str, reply: &str) -> RefinedQuery {
    let mut lines = reply.lines().map(strip_list_prefix).filter(|l| !l.is_empty());
    let Some(refined) = lines.next() else {
        return RefinedQuery::identity(raw_query, true);
    };
    let mut expansion_terms: Vec<String> = Vec::new();
    for term in lines {
        if expansion_terms.len() == MAX_EXPANSION_TERMS {
            break;
        }
        if !expansion_terms.iter().any(|t| t == term) {
            expansion_terms.push(term.to_string());
        }
    }
    RefinedQuery { original: raw_query.to_string(), refined: refined.to_string(), expansion_terms, fallback: false }
}

pub fn refine_query(raw: &str, llm: &dyn ChatModel) -> Result<RefinedQuery, RetrievalError> {
    if raw.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    if !llm.refines_queries() {
        return Ok(RefinedQuery::identity(raw, false));
    }
    let prompt = default_texts().refine_prompt.replace("{query}", raw.trim());
    match llm_complete(&prompt, llm) {
        Ok(reply) => Ok(parse_refinement(raw, &reply)),
        Err(e) => {
            log::warn!("query refinement failed, using the original query: {e}");
            Ok(RefinedQuery::identity(raw, true))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    Rrf,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionPolicy {
    pub method: FusionMethod,
    pub rrf_c: f64,
    pub vector_weight: f64,
    pub n_candidates: usize,
    pub keep: usize,
}

impl Default for FusionPolicy {
    fn default() -> Self {
        Self { method: FusionMethod::Rrf, rrf_c: 60.0, vector_weight: 0.5, n_candidates: 200, keep: 50 }
    }
}

impl FusionPolicy {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let bad = |m: String| Err(RetrievalError::InvalidPolicy(m));
        if !(self.rrf_c > 0.0 && self.rrf_c.is_finite()) {
            return bad(format!("rrf_c must be positive, got {}", self.rrf_c));
        }
        if !(0.0..=1.0).contains(&self.vector_weight) {
            return bad(format!("vector_weight must be in [0, 1], got {}", self.vector_weight));
        }
        if self.keep == 0 || self.keep > self.n_candidates {
            return bad(format!("need 1 <= keep <= n_candidates, got {} and {}", self.keep, self.n_candidates));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegHit {
    /// 1-based rank in the leg's list.
    pub rank: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub chunk_id: String,
    pub bm25: Option<LegHit>,
    pub vector: Option<LegHit>,
    pub fused_score: f64,
    pub fused_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn chunk_ids(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.chunk_id.as_str()).collect()
    }
}

/// Min-max scales each list's scores into [0, 1]; a list whose scores are all
/// equal maps to 1.
fn minmax(list: &[ScoredChunk]) -> HashMap<&str, f64> {
    let lo = list.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
    let hi = list.iter().map(|s| s.score).fold(f64::NEG_INFINITY, f64::max);
    list.iter()
        .map(|s| {
            let v = if hi > lo { (s.score - lo) / (hi - lo) } else { 1.0 };
            (s.chunk_id.as_str(), v)
        })
        .collect()
}

/// Fuses a lexical and a vector ranking. Each list must be best first.
///
/// Reciprocal-rank fusion sums `1 / (c + rank)` over the lists that contain a
/// chunk. Weighted fusion mixes min-max scaled scores, counting a chunk
/// missing from a list as 0. The result keeps the top `n_candidates` by fused
/// score, ties broken by ascending chunk id.
pub fn fuse(bm25: &[ScoredChunk], vector: &[ScoredChunk], policy: &FusionPolicy) -> CandidateSet {
    let mut by_id: BTreeMap<&str, Candidate> = BTreeMap::new();
    for (leg, list) in [(0, bm25), (1, vector)] {
        for (i, hit) in list.iter().enumerate() {
            let c = by_id.entry(hit.chunk_id.as_str()).or_insert_with(|| Candidate {
                chunk_id: hit.chunk_id.clone(),
                bm25: None,
                vector: None,
                fused_score: 0.0,
                fused_rank: 0,
            });
            let slot = if leg == 0 { &mut c.bm25 } else { &mut c.vector };
            if slot.is_none() {
                *slot = Some(LegHit { rank: i + 1, score: hit.score });
            }
        }
    }
    let (scaled_bm25, scaled_vec) = (minmax(bm25), minmax(vector));
    for c in by_id.values_mut() {
        c.fused_score = match policy.method {
            FusionMethod::Rrf => [c.bm25, c.vector]
                .iter()
                .flatten()
                .map(|h| 1.0 / (policy.rrf_c + h.rank as f64))
                .sum(),
            FusionMethod::Weighted => {
                let s = scaled_bm25.get(c.chunk_id.as_str()).copied().unwrap_or(0.0);
                let v = scaled_vec.get(c.chunk_id.as_str()).copied().unwrap_or(0.0);
                policy.vector_weight * v + (1.0 - policy.vector_weight) * s
            }
        };
    }
    let mut candidates: Vec<Candidate> = by_id.into_values().collect();
    candidates.sort_by(|a, b| b.fused_score.total_cmp(&a.fused_score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
    candidates.truncate(policy.n_candidates);
    for (i, c) in candidates.iter_mut().enumerate() {
        c.fused_rank = i + 1;
    }
    CandidateSet { candidates }
}

/// Runs the BM25 and vector legs concurrently and fuses their rankings.
/// Expansion terms feed the BM25 leg only.
pub fn hybrid_retrieve(
    refined: &RefinedQuery,
    index: &HybridIndex,
    embedder: &dyn Embedder,
    policy: &FusionPolicy,
) -> Result<CandidateSet, RetrievalError> {
    policy.validate()?;
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    if refined.refined.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let k = policy.n_candidates;
    let ef = index.params().hnsw.ef_search.max(k);
    let terms = refined.bm25_terms();
    let (lexical, vector) = std::thread::scope(|scope| {
        let lexical = scope.spawn(|| index.bm25_search(&terms, k));
        let vector = (|| -> Result<Vec<ScoredChunk>, RetrievalError> {
            let q = embed_batch(std::slice::from_ref(&refined.refined), embedder)?.remove(0);
            Ok(index.hnsw_search(&q, k, ef)?)
        })();
        (lexical.join().expect("bm25 leg panicked"), vector)
    });
    Ok(fuse(&lexical, &vector?, policy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub chunk_id: String,
    pub text: String,
    pub rerank_score: f64,
    pub fused_rank: usize,
    /// 1-based position, used as the citation marker `[i]`.
    pub context_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub snippets: Vec<Snippet>,
    /// Set when the reranker failed and fused order was used instead.
    pub fallback: bool,
}

/// Rescores the candidates with one reranker call and keeps the best `keep`.
///
/// Candidates beyond [`RERANK_DOC_LIMIT`] are cut by fused rank first. With
/// `fallback` enabled a provider failure yields the top `keep` in fused order
/// with the fused score standing in for the rerank score.
pub fn rerank_candidates(
    refined: &RefinedQuery,
    candidates: &CandidateSet,
    index: &HybridIndex,
    reranker: &dyn Reranker,
    policy: &FusionPolicy,
    fallback: bool,
) -> Result<RerankOutcome, RetrievalError> {
    policy.validate()?;
    if candidates.is_empty() {
        return Err(RetrievalError::NoCandidates);
    }
    let mut pool: Vec<&Candidate> = candidates.candidates.iter().collect();
    pool.sort_by_key(|c| c.fused_rank);
    pool.truncate(RERANK_DOC_LIMIT);
    let texts = pool
        .iter()
        .map(|c| index.get(&c.chunk_id).map(|chunk| chunk.text.clone()).ok_or(IndexError::UnknownChunk(c.chunk_id.clone())))
        .collect::<Result<Vec<String>, IndexError>>()?;
    let keep = policy.keep.min(pool.len());

    let (scored, used_fallback): (Vec<(usize, f64)>, bool) = match rerank_call(&refined.refined, &texts, keep, reranker) {
        Ok(hits) => {
            let mut scored: Vec<(usize, f64)> = hits.iter().map(|h| (h.index, h.relevance_score)).collect();
            scored.sort_by(|a, b| {
                b.1.total_cmp(&a.1).then_with(|| pool[a.0].fused_rank.cmp(&pool[b.0].fused_rank))
            });
            (scored, false)
        }
        Err(e) if fallback => {
            log::warn!("reranker failed, keeping fused order: {e}");
            ((0..keep).map(|i| (i, pool[i].fused_score)).collect(), true)
        }
        Err(e) => return Err(e.into()),
    };
    let snippets = scored
        .into_iter()
        .take(keep)
        .enumerate()
        .map(|(pos, (i, score))| Snippet {
            chunk_id: pool[i].chunk_id.clone(),
            text: texts[i].clone(),
            rerank_score: score,
            fused_rank: pool[i].fused_rank,
            context_index: pos + 1,
        })
        .collect();
    Ok(RerankOutcome { snippets, fallback: used_fallback })
}

/// Orders snippets by descending rerank score, then ascending fused rank.
pub fn snippet_order(a: &Snippet, b: &Snippet) -> Ordering {
    b.rerank_score.total_cmp(&a.rerank_score).then(a.fused_rank.cmp(&b.fused_rank))
}
