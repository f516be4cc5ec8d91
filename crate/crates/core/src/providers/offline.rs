//! Deterministic offline providers.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChatModel, Embedder, ProviderError, RerankHit, Reranker};
use crate::index::EmbeddingVector;
use crate::verify::{split_sentences, support_score};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfflineEmbedderSpec {
    pub dim: usize,
    pub seed: u64,
    pub ngram_n: usize,
}

impl Default for OfflineEmbedderSpec {
    fn default() -> Self {
        Self { dim: 256, seed: 42, ngram_n: 3 }
    }
}

impl OfflineEmbedderSpec {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.dim < 8 || self.ngram_n == 0 {
            return Err(ProviderError::InvalidConfig(format!(
                "offline embedder needs dim >= 8 and ngram_n >= 1 (got {} / {})",
                self.dim, self.ngram_n
            )));
        }
        Ok(())
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 33)).wrapping_mul(0xff51_afd7_ed55_8ccd);
    x = (x ^ (x >> 33)).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^ (x >> 33)
}

/// Feature-hashed character n-gram embedding.
///
/// The text is case-folded and whitespace-collapsed, padded with one space on
/// each side, and every character n-gram adds ±1 to a hashed axis. The sign
/// comes from an independent mix of the same hash, both keyed by the seed.
pub fn offline_embed(text: &str, spec: &OfflineEmbedderSpec) -> Result<EmbeddingVector, ProviderError> {
    spec.validate()?;
    let folded = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    if folded.is_empty() {
        return Err(ProviderError::EmptyInput);
    }
    let chars: Vec<char> = format!(" {folded} ").chars().collect();
    let n = spec.ngram_n.min(chars.len());
    let mut v = vec![0.0f64; spec.dim];
    let mut gram = String::new();
    for window in chars.windows(n) {
        gram.clear();
        gram.extend(window);
        let h = fnv1a(spec.seed, gram.as_bytes());
        let axis = (h % spec.dim as u64) as usize;
        let sign = if mix(h ^ spec.seed) & 1 == 0 { 1.0 } else { -1.0 };
        v[axis] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // All n-gram contributions cancelled; fall back to a text-keyed axis.
        let axis = (fnv1a(spec.seed, folded.as_bytes()) % spec.dim as u64) as usize;
        v[axis] = 1.0;
        return Ok(EmbeddingVector(v));
    }
    Ok(EmbeddingVector(v.into_iter().map(|x| x / norm).collect()))
}

#[derive(Debug, Clone, Default)]
pub struct OfflineEmbedder {
    pub spec: OfflineEmbedderSpec,
}

impl OfflineEmbedder {
    pub fn new(spec: OfflineEmbedderSpec) -> Result<Self, ProviderError> {
        spec.validate()?;
        Ok(Self { spec })
    }
}

impl Embedder for OfflineEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        texts.iter().map(|t| offline_embed(t, &self.spec)).collect()
    }
}

fn context_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^\[(\d+)\] (.+)$").unwrap())
}

/// Extractive stand-in for a chat model.
///
/// Reads the numbered context lines (`[i] text`) from the prompt and answers
/// with the first sentence of each of the three lowest-numbered snippets,
/// each followed by its citation marker.
#[derive(Debug, Clone)]
pub struct ExtractiveGenerator {
    pub snippets_used: usize,
}

impl Default for ExtractiveGenerator {
    fn default() -> Self {
        Self { snippets_used: 3 }
    }
}

impl ExtractiveGenerator {
    pub fn answer(&self, prompt: &str) -> String {
        let mut entries: BTreeMap<usize, &str> = BTreeMap::new();
        for cap in context_line().captures_iter(prompt) {
            if let Ok(i) = cap[1].parse::<usize>() {
                entries.entry(i).or_insert(cap.get(2).map_or("", |m| m.as_str()));
            }
        }
        entries
            .into_iter()
            .filter_map(|(i, text)| split_sentences(text).into_iter().next().map(|s| format!("{s} [{i}]")))
            .take(self.snippets_used)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl ChatModel for ExtractiveGenerator {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        Ok(self.answer(prompt))
    }

    fn refines_queries(&self) -> bool {
        false
    }
}

/// Scores each document by the token-LCS coverage of the query.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalReranker;

impl Reranker for LexicalReranker {
    fn rerank(&self, query: &str, documents: &[String], top_n: usize) -> Result<Vec<RerankHit>, ProviderError> {
        let mut hits = Vec::with_capacity(documents.len());
        for (index, doc) in documents.iter().enumerate() {
            let relevance_score = support_score(query, doc).map_err(|_| ProviderError::EmptyInput)?;
            hits.push(RerankHit { index, relevance_score });
        }
        hits.sort_by(|a, b| b.relevance_score.total_cmp(&a.relevance_score).then(a.index.cmp(&b.index)));
        hits.truncate(top_n);
        Ok(hits)
    }
}
