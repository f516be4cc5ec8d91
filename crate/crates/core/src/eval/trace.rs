//! Answer-quality metrics computed from token alignments.
//!
//! Tokens are the case-folded, punctuation-free terms of the ingest
//! tokenizer, and citation markers are removed from answers first. The
//! hallucination rate aligns each answer sentence with each snippet; a token
//! counts as supported when some alignment uses it. Utilization aligns the
//! whole answer with each snippet and counts the snippet tokens used.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

use super::{EvalError, QueryMetrics, TraceRecord};
use crate::align::lcs_alignment;
use crate::ingest::content_terms;
use crate::verify::{split_sentences, support_score};

pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do", "does",
    "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have", "having", "he", "her",
    "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself",
    "just", "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or",
    "other", "our", "ours", "ourselves", "out", "over", "own", "same", "she", "should", "so", "some", "such", "than",
    "that", "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those",
    "through", "to", "too", "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself", "yourselves",
];

fn marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[\d+\]").unwrap())
}

pub fn strip_citation_markers(text: &str) -> String {
    marker().replace_all(text, " ").into_owned()
}

fn snippet_terms(record: &TraceRecord) -> Result<Vec<Vec<String>>, EvalError> {
    if record.snippets.is_empty() {
        return Err(EvalError::EmptySnippets);
    }
    Ok(record.snippets.iter().map(|s| content_terms(s)).collect())
}

/// Unsupported answer tokens over all answer tokens.
pub fn trace_hallucination(record: &TraceRecord) -> Result<f64, EvalError> {
    let answer = strip_citation_markers(&record.answer);
    let snippets: Vec<Vec<String>> = record.snippets.iter().map(|s| content_terms(s)).collect();
    let (mut total, mut unsupported) = (0usize, 0usize);
    for sentence in split_sentences(&answer) {
        let tokens = content_terms(&sentence);
        let mut supported = vec![false; tokens.len()];
        for snippet in &snippets {
            for (i, _) in lcs_alignment(&tokens, snippet) {
                supported[i] = true;
            }
        }
        total += tokens.len();
        unsupported += supported.iter().filter(|s| !**s).count();
    }
    if total == 0 {
        return Err(EvalError::EmptyAnswer);
    }
    Ok(unsupported as f64 / total as f64)
}

/// Distinct snippet tokens aligned with the answer over all snippet tokens.
pub fn trace_utilization(record: &TraceRecord) -> Result<f64, EvalError> {
    let snippets = snippet_terms(record)?;
    let total: usize = snippets.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(EvalError::InvalidRecord("snippets have no content tokens".into()));
    }
    let answer = content_terms(&strip_citation_markers(&record.answer));
    let used: usize = snippets
        .iter()
        .map(|s| lcs_alignment(&answer, s).into_iter().map(|(_, j)| j).collect::<BTreeSet<_>>().len())
        .sum();
    Ok(used as f64 / total as f64)
}

/// Share of key points whose support in the answer reaches `threshold`.
pub fn trace_completeness(record: &TraceRecord, threshold: f64) -> Result<f64, EvalError> {
    let points = record.key_points.as_deref().filter(|p| !p.is_empty()).ok_or(EvalError::MissingKeyPoints)?;
    let answer = strip_citation_markers(&record.answer);
    let mut covered = 0usize;
    for point in points {
        let score = support_score(point, &answer)
            .map_err(|_| EvalError::InvalidRecord(format!("key point {point:?} has no content tokens")))?;
        if score >= threshold {
            covered += 1;
        }
    }
    Ok(covered as f64 / points.len() as f64)
}

fn query_terms(query: &str) -> BTreeSet<String> {
    content_terms(query).into_iter().filter(|t| !STOPWORDS.contains(&t.as_str())).collect()
}

/// Mean over snippets of the share of distinct query terms (stopwords
/// removed) that the snippet contains.
pub fn trace_context_relevance(record: &TraceRecord) -> Result<f64, EvalError> {
    let snippets = snippet_terms(record)?;
    let query = query_terms(&record.query);
    if query.is_empty() {
        return Err(EvalError::InvalidRecord("query has no content terms outside the stopword list".into()));
    }
    let sum: f64 = snippets
        .iter()
        .map(|s| {
            let present: BTreeSet<&str> = s.iter().map(String::as_str).collect();
            query.iter().filter(|t| present.contains(t.as_str())).count() as f64 / query.len() as f64
        })
        .sum();
    Ok(sum / snippets.len() as f64)
}

/// All applicable metrics per record. Completeness is skipped for records
/// without key points and accuracy is copied when present.
pub fn evaluate_traces(records: &[TraceRecord], threshold: f64) -> Result<Vec<QueryMetrics>, EvalError> {
    records
        .iter()
        .enumerate()
        .map(|(n, r)| {
            let id = r.query_id.clone().unwrap_or_else(|| format!("trace-{}", n + 1));
            let mut row = QueryMetrics::new(&id, r.dataset.as_deref());
            row.values.insert("hallucination".into(), trace_hallucination(r)?);
            row.values.insert("utilization".into(), trace_utilization(r)?);
            row.values.insert("context_relevance".into(), trace_context_relevance(r)?);
            if r.key_points.is_some() {
                row.values.insert("completeness".into(), trace_completeness(r, threshold)?);
            }
            if let Some(a) = r.human_accuracy {
                if !(1.0..=5.0).contains(&a) {
                    return Err(EvalError::InvalidRecord(format!("human_accuracy {a} is outside 1..5")));
                }
                row.values.insert("accuracy".into(), a);
            }
            Ok(row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(query: &str, answer: &str, snippets: &[&str]) -> TraceRecord {
        TraceRecord {
            query_id: None,
            dataset: None,
            query: query.into(),
            answer: answer.into(),
            snippets: snippets.iter().map(|s| s.to_string()).collect(),
            key_points: None,
            human_accuracy: None,
        }
    }

    #[test]
    fn copied_answer() {
        let r = record("rent", "Rent is due monthly. [1]", &["Rent is due monthly.", "Pets are allowed."]);
        assert_eq!(trace_hallucination(&r).unwrap(), 0.0);
        assert_eq!(trace_utilization(&r).unwrap(), 4.0 / 7.0);
    }

    #[test]
    fn disjoint_answer() {
        let r = record("rent", "Cats fly south.", &["Rent is due monthly."]);
        assert_eq!(trace_hallucination(&r).unwrap(), 1.0);
        assert_eq!(trace_utilization(&r).unwrap(), 0.0);
    }

    #[test]
    fn concatenated_snippets() {
        let s = ["The tenant pays rent.", "The landlord fixes the roof."];
        let r = record("rent", &s.join(" "), &s);
        assert_eq!(trace_hallucination(&r).unwrap(), 0.0);
        assert_eq!(trace_utilization(&r).unwrap(), 1.0);
    }

    #[test]
    fn half_supported_answer() {
        let r = record("q", "alpha beta gamma delta one two three four.", &["alpha beta gamma delta"]);
        assert_eq!(trace_hallucination(&r).unwrap(), 0.5);
    }

    #[test]
    fn completeness() {
        let mut r = record("q", "Rent is due monthly. Pets are allowed. Smoking is banned.", &["x"]);
        assert!(matches!(trace_completeness(&r, 0.6), Err(EvalError::MissingKeyPoints)));
        r.key_points = Some(vec!["rent is due".into(), "pets are allowed".into(), "smoking is banned".into(), "parking is free".into()]);
        assert_eq!(trace_completeness(&r, 0.6).unwrap(), 0.75);
    }

    #[test]
    fn context_relevance() {
        let r = record("What is the rent amount?", "", &["The rent amount is 900.", "Pets are allowed."]);
        assert_eq!(trace_context_relevance(&r).unwrap(), 0.5);
        let r = record("rent", "", &["nothing"]);
        assert_eq!(trace_context_relevance(&r).unwrap(), 0.0);
        assert!(matches!(trace_context_relevance(&record("rent", "", &[])), Err(EvalError::EmptySnippets)));
    }

    #[test]
    fn empty_answer() {
        assert!(matches!(trace_hallucination(&record("q", "[1]", &["x"])), Err(EvalError::EmptyAnswer)));
    }
}
