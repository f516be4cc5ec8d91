//! Citation grounding: per-sentence support scoring and the
//! generate, verify, regenerate loop.

mod grounding;
mod sentences;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grounding::{grounded_answer_loop, AnswerStatus, Citation, FinalAnswer, GroundingError, RoundRecord};
pub use sentences::{sentence_spans, split_sentences, ABBREVIATIONS};

use crate::align::lcs_len;
use crate::generation::DraftAnswer;
use crate::ingest::content_terms;
use crate::retrieval::Snippet;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("sentence has no content tokens")]
    EmptySentence,
    #[error("invalid support policy: {0}")]
    InvalidPolicy(String),
}

/// Fraction of the sentence's tokens that appear, in order, in the snippet.
///
/// Both sides are case-folded and stripped of punctuation tokens; the score
/// is the longest common token subsequence over the sentence token count.
pub fn support_score(sentence: &str, snippet_text: &str) -> Result<f64, VerifyError> {
    let s = content_terms(sentence);
    if s.is_empty() {
        return Err(VerifyError::EmptySentence);
    }
    let t = content_terms(snippet_text);
    Ok(lcs_len(&s, &t) as f64 / s.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupportPolicy {
    pub threshold: f64,
    pub max_rounds: usize,
    pub strict: bool,
    pub check_uncited_against_all: bool,
}

impl Default for SupportPolicy {
    fn default() -> Self {
        Self { threshold: 0.6, max_rounds: 3, strict: false, check_uncited_against_all: true }
    }
}

impl SupportPolicy {
    pub fn strict() -> Self {
        Self { strict: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), VerifyError> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(VerifyError::InvalidPolicy(format!("threshold must be in (0, 1], got {}", self.threshold)));
        }
        if self.max_rounds == 0 {
            return Err(VerifyError::InvalidPolicy("max_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceVerdict {
    pub text: String,
    pub cited: Vec<usize>,
    pub best_support: f64,
    pub supporting_chunk_id: Option<String>,
    pub pass: bool,
    pub missing_citation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub sentences: Vec<SentenceVerdict>,
    pub rounds_used: usize,
    pub all_pass: bool,
    pub unsupported_fraction: f64,
    /// Set when the draft had no sentences; `all_pass` is then vacuous.
    pub empty: bool,
}

impl VerificationReport {
    pub fn failing(&self) -> impl Iterator<Item = &SentenceVerdict> {
        self.sentences.iter().filter(|v| !v.pass)
    }
}

/// Highest support over `candidates`; earlier candidates win ties.
fn best_over<'a>(sentence: &str, candidates: impl Iterator<Item = &'a Snippet>) -> (f64, Option<String>) {
    let mut best = (0.0, None);
    for snippet in candidates {
        let score = support_score(sentence, &snippet.text).unwrap_or(0.0);
        if best.1.is_none() || score > best.0 {
            best = (score, Some(snippet.chunk_id.clone()));
        }
    }
    best
}

/// Scores every draft sentence against the snippets it cites.
///
/// Uncited sentences are scored against every snippet when the policy allows
/// it, otherwise they score 0. They are flagged `missing_citation` either way.
/// Sentences without content tokens (a lone marker or symbol) score 0.
pub fn verify_draft(draft: &DraftAnswer, snippets: &[Snippet], policy: &SupportPolicy) -> VerificationReport {
    let by_index: BTreeMap<usize, &Snippet> = snippets.iter().map(|s| (s.context_index, s)).collect();
    let sentences: Vec<SentenceVerdict> = draft
        .sentences
        .iter()
        .map(|sentence| {
            let (best_support, supporting_chunk_id) = if !sentence.cited.is_empty() {
                best_over(&sentence.text, sentence.cited.iter().filter_map(|i| by_index.get(i).copied()))
            } else if policy.check_uncited_against_all {
                best_over(&sentence.text, by_index.values().copied())
            } else {
                (0.0, None)
            };
            SentenceVerdict {
                text: sentence.text.clone(),
                cited: sentence.cited.clone(),
                best_support,
                supporting_chunk_id,
                pass: best_support >= policy.threshold,
                missing_citation: sentence.cited.is_empty(),
            }
        })
        .collect();
    let failing = sentences.iter().filter(|v| !v.pass).count();
    let total = sentences.len();
    VerificationReport {
        all_pass: failing == 0,
        unsupported_fraction: if total == 0 { 0.0 } else { failing as f64 / total as f64 },
        empty: total == 0,
        rounds_used: 1,
        sentences,
    }
}
