//! Okapi BM25 over an in-memory inverted index.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::IndexError;
use crate::ingest::content_terms;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), IndexError> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) || !(0.0..=1.0).contains(&self.b) {
            return Err(IndexError::InvalidParams(format!("bm25 k1={} b={}", self.k1, self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`; never negative.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    let n = n_docs as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Saturated, length-normalised term frequency weight.
pub fn tf_weight(params: &Bm25Params, tf: u32, doc_len: u32, avgdl: f64) -> f64 {
    let tf = tf as f64;
    let norm = if avgdl > 0.0 { doc_len as f64 / avgdl } else { 1.0 };
    tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm))
}

/// Normalises raw query terms the same way document text is indexed and
/// drops repeats, keeping first-occurrence order.
pub fn normalize_query<S: AsRef<str>>(terms: &[S]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in terms {
        for term in content_terms(t.as_ref()) {
            if !out.contains(&term) {
                out.push(term);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    pub(crate) postings: HashMap<String, Vec<Posting>>,
    pub(crate) doc_lengths: Vec<u32>,
    pub(crate) total_len: u64,
}

impl Bm25Index {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avgdl(&self) -> f64 {
        if self.doc_lengths.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.doc_lengths.len() as f64
        }
    }

    pub fn doc_len(&self, doc: u32) -> u32 {
        self.doc_lengths[doc as usize]
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Appends a document; returns its dense id.
    pub fn add(&mut self, terms: &[String]) -> u32 {
        let doc = self.doc_lengths.len() as u32;
        let mut counts: HashMap<&str, u32> = HashMap::new();
        for t in terms {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        for (term, tf) in counts {
            self.postings.entry(term.to_string()).or_default().push(Posting { doc, tf });
        }
        self.doc_lengths.push(terms.len() as u32);
        self.total_len += terms.len() as u64;
        doc
    }

    pub fn term_freq(&self, term: &str, doc: u32) -> u32 {
        self.postings
            .get(term)
            .and_then(|list| list.binary_search_by_key(&doc, |p| p.doc).ok().map(|i| list[i].tf))
            .unwrap_or(0)
    }

    /// Score of one document for already-normalised query terms.
    pub fn score(&self, params: &Bm25Params, terms: &[String], doc: u32) -> f64 {
        let n = self.num_docs();
        let avgdl = self.avgdl();
        let dl = self.doc_len(doc);
        let mut score = 0.0;
        for term in terms {
            let tf = self.term_freq(term, doc);
            if tf == 0 {
                continue;
            }
            score += idf(n, self.doc_freq(term)) * tf_weight(params, tf, dl, avgdl);
        }
        score
    }

    /// Term-at-a-time accumulation over the postings of each query term.
    /// Only documents matching at least one term are returned, unordered.
    /// Per-document sums are formed in query-term order, so each value is
    /// bit-identical to [`Bm25Index::score`].
    pub fn accumulate(&self, params: &Bm25Params, terms: &[String]) -> Vec<(u32, f64)> {
        let n = self.num_docs();
        let avgdl = self.avgdl();
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in terms {
            let Some(list) = self.postings.get(term) else { continue };
            let w = idf(n, list.len());
            for p in list {
                *acc.entry(p.doc).or_insert(0.0) += w * tf_weight(params, p.tf, self.doc_len(p.doc), avgdl);
            }
        }
        acc.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(docs: &[&str]) -> Bm25Index {
        let mut index = Bm25Index::new();
        for d in docs {
            index.add(&content_terms(d));
        }
        index
    }

    #[test]
    fn absent_term_scores_zero() {
        let index = idx(&["the lease term", "rent due monthly"]);
        let p = Bm25Params::default();
        assert_eq!(index.score(&p, &normalize_query(&["arbitration"]), 0), 0.0);
        assert!(index.accumulate(&p, &normalize_query(&["arbitration"])).is_empty());
    }

    #[test]
    fn three_doc_lease_corpus() {
        let index = idx(&["the lease term is five years", "lease lease renewal", "rent is due monthly"]);
        let p = Bm25Params::default();
        let q = normalize_query(&["Lease"]);
        // N=3, df=2, avgdl=(6+3+4)/3
        let idf = (1.0f64 + (3.0 - 2.0 + 0.5) / (2.0 + 0.5)).ln();
        let avgdl = 13.0 / 3.0;
        let d0 = idf * (1.0 * 2.2) / (1.0 + 1.2 * (0.25 + 0.75 * 6.0 / avgdl));
        let d1 = idf * (2.0 * 2.2) / (2.0 + 1.2 * (0.25 + 0.75 * 3.0 / avgdl));
        assert!((index.score(&p, &q, 0) - d0).abs() < 1e-9);
        assert!((index.score(&p, &q, 1) - d1).abs() < 1e-9);
        assert_eq!(index.score(&p, &q, 2), 0.0);
    }

    #[test]
    fn idf_never_negative() {
        for n in 1..50 {
            for df in 0..=n {
                assert!(idf(n, df) > 0.0);
            }
        }
    }

    #[test]
    fn query_normalisation_dedupes() {
        assert_eq!(normalize_query(&["Lease", "lease.", "Term of lease"]), ["lease", "term", "of"]);
    }

    #[test]
    fn params_validation() {
        assert!(Bm25Params { k1: -0.1, b: 0.5 }.validate().is_err());
        assert!(Bm25Params { k1: 1.0, b: 1.5 }.validate().is_err());
        assert!(Bm25Params::default().validate().is_ok());
    }
}
