use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::GenerationError;
use crate::verify::sentence_spans;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftSentence {
    /// Sentence text with citation markers removed.
    pub text: String,
    /// Context indices cited by the sentence, in order of first appearance.
    pub cited: Vec<usize>,
    pub missing_citation: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftAnswer {
    pub raw: String,
    pub sentences: Vec<DraftSentence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidCitationMode {
    /// Fail with `InvalidCitation`.
    Reject,
    /// Discard markers that do not resolve.
    Drop,
}

fn marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[(\d+)\]").unwrap())
}

fn space_before_punct() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s+([.,;:!?])").unwrap())
}

pub fn parse_answer(raw: &str, manifest: &BTreeMap<usize, String>) -> Result<DraftAnswer, GenerationError> {
    parse_answer_with(raw, manifest, InvalidCitationMode::Reject)
}

pub fn parse_answer_with(
    raw: &str,
    manifest: &BTreeMap<usize, String>,
    mode: InvalidCitationMode,
) -> Result<DraftAnswer, GenerationError> {
    if raw.trim().is_empty() {
        return Err(GenerationError::EmptyAnswer);
    }
    let mut sentences: Vec<DraftSentence> = Vec::new();
    for span in sentence_spans(raw) {
        let piece = &raw[span];
        let mut cited = Vec::new();
        for cap in marker().captures_iter(piece) {
            // Indices too large for usize can never be in the manifest.
            let index = cap[1].parse::<usize>().unwrap_or(usize::MAX);
            if !manifest.contains_key(&index) {
                match mode {
                    InvalidCitationMode::Reject => return Err(GenerationError::InvalidCitation(index)),
                    InvalidCitationMode::Drop => continue,
                }
            }
            if !cited.contains(&index) {
                cited.push(index);
            }
        }
        let stripped = marker().replace_all(piece, " ");
        let text = space_before_punct()
            .replace_all(&stripped.split_whitespace().collect::<Vec<_>>().join(" "), "$1")
            .into_owned();
        if text.is_empty() {
            // A run of markers on its own belongs to the previous sentence.
            if let Some(prev) = sentences.last_mut() {
                for i in cited {
                    if !prev.cited.contains(&i) {
                        prev.cited.push(i);
                    }
                }
                prev.missing_citation = prev.cited.is_empty();
            }
            continue;
        }
        sentences.push(DraftSentence { missing_citation: cited.is_empty(), text, cited });
    }
    if sentences.is_empty() {
        return Err(GenerationError::EmptyAnswer);
    }
    Ok(DraftAnswer { raw: raw.to_string(), sentences })
}
