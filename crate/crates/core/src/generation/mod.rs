//! CO-STAR prompt assembly and draft parsing.
//!
//! Prompts have six sections in fixed order: Context, Objective, Style, Tone,
//! Audience, Response. Retrieved snippets are listed inside the Context
//! section as `[i] text` lines, and the model is asked to end each sentence
//! with the `[i]` markers of its sources.

mod parse;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_answer, parse_answer_with, DraftAnswer, DraftSentence, InvalidCitationMode};

use crate::ingest::tokenize;
use crate::retrieval::Snippet;

pub const SECTION_HEADERS: [&str; 6] = ["# CONTEXT", "# OBJECTIVE", "# STYLE", "# TONE", "# AUDIENCE", "# RESPONSE"];

const SECTION_PLACEHOLDERS: [&str; 6] = ["context", "objective", "style", "tone", "audience", "response"];

const DEFAULT_LAYOUT: &str = include_str!("../../templates/costar_v1.txt");
const DEFAULT_TEXTS: &str = include_str!("../../templates/costar_v1.json");

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("no snippets to build a prompt from")]
    NoSnippets,
    #[error("token budget {budget} cannot fit a single snippet (needs {needed})")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("citation [{0}] does not refer to a context snippet")]
    InvalidCitation(usize),
    #[error("answer is empty")]
    EmptyAnswer,
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Versioned default wording for every prompt the pipeline sends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateTexts {
    pub version: String,
    pub context: String,
    pub objective: String,
    pub style: String,
    pub tone: String,
    pub audience: String,
    pub response: String,
    pub strict_rule: String,
    /// Contains a `{failing}` placeholder for the list of rejected sentences.
    pub regeneration_directive: String,
    pub refusal_text: String,
    /// Contains a `{query}` placeholder.
    pub refine_prompt: String,
}

pub fn default_texts() -> &'static TemplateTexts {
    static TEXTS: OnceLock<TemplateTexts> = OnceLock::new();
    TEXTS.get_or_init(|| serde_json::from_str(DEFAULT_TEXTS).expect("bundled template texts are valid JSON"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoStarSpec {
    pub context_preamble: String,
    pub objective: String,
    pub style: String,
    pub tone: String,
    pub audience: String,
    pub response_rules: String,
    pub max_context_tokens: usize,
}

impl Default for CoStarSpec {
    fn default() -> Self {
        let t = default_texts();
        Self {
            context_preamble: t.context.clone(),
            objective: t.objective.clone(),
            style: t.style.clone(),
            tone: t.tone.clone(),
            audience: t.audience.clone(),
            response_rules: t.response.clone(),
            max_context_tokens: 6000,
        }
    }
}

impl CoStarSpec {
    /// Replaces blank sections with the bundled defaults.
    pub fn with_defaults(mut self) -> Self {
        let d = CoStarSpec::default();
        for (field, default) in [
            (&mut self.context_preamble, d.context_preamble),
            (&mut self.objective, d.objective),
            (&mut self.style, d.style),
            (&mut self.tone, d.tone),
            (&mut self.audience, d.audience),
            (&mut self.response_rules, d.response_rules),
        ] {
            if field.trim().is_empty() {
                *field = default;
            }
        }
        self
    }

    fn section_values(&self) -> [&str; 6] {
        [
            &self.context_preamble,
            &self.objective,
            &self.style,
            &self.tone,
            &self.audience,
            &self.response_rules,
        ]
    }
}

/// Prompt layout with `{name}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self { text: DEFAULT_LAYOUT.to_string() }
    }
}

impl PromptTemplate {
    /// Checks that all six section placeholders appear once each in CO-STAR
    /// order, together with `{snippets}` and `{query}`.
    pub fn parse(text: &str) -> Result<Self, GenerationError> {
        let mut last = 0;
        for name in SECTION_PLACEHOLDERS {
            let needle = format!("{{{name}}}");
            let pos = text
                .find(&needle)
                .ok_or_else(|| GenerationError::InvalidTemplate(format!("missing {needle}")))?;
            if text.matches(&needle).count() != 1 {
                return Err(GenerationError::InvalidTemplate(format!("{needle} appears more than once")));
            }
            if pos < last {
                return Err(GenerationError::InvalidTemplate(format!("{needle} is out of order")));
            }
            last = pos;
        }
        for needle in ["{snippets}", "{query}"] {
            if !text.contains(needle) {
                return Err(GenerationError::InvalidTemplate(format!("missing {needle}")));
            }
        }
        Ok(Self { text: text.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, GenerationError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Single-pass substitution, so placeholder-like text inside values is
    /// left alone.
    fn render(&self, values: &HashMap<&str, &str>) -> String {
        let mut out = String::with_capacity(self.text.len() * 2);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}').and_then(|close| values.get(&after[..close]).map(|v| (close, v))) {
                Some((close, value)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    /// Context index → chunk id for every snippet that made it into the prompt.
    pub manifest: BTreeMap<usize, String>,
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn render_snippet_line(snippet: &Snippet) -> String {
    format!("[{}] {}", snippet.context_index, one_line(&snippet.text))
}

fn render_with(query: &str, snippets: &[Snippet], spec: &CoStarSpec, template: &PromptTemplate) -> String {
    let listing = snippets.iter().map(render_snippet_line).collect::<Vec<_>>().join("\n");
    let query = one_line(query);
    let mut values: HashMap<&str, &str> = SECTION_PLACEHOLDERS.into_iter().zip(spec.section_values()).collect();
    values.insert("snippets", &listing);
    values.insert("query", &query);
    template.render(&values)
}

/// Renders the prompt, dropping the highest-numbered snippets whole until the
/// prompt fits `max_context_tokens` (counted with the ingest tokenizer).
pub fn build_costar_prompt(
    query: &str,
    snippets: &[Snippet],
    spec: &CoStarSpec,
    template: &PromptTemplate,
) -> Result<Prompt, GenerationError> {
    if snippets.is_empty() {
        return Err(GenerationError::NoSnippets);
    }
    let mut ordered: Vec<Snippet> = snippets.to_vec();
    ordered.sort_by_key(|s| s.context_index);
    let spec = spec.clone().with_defaults();
    let budget = spec.max_context_tokens;
    let count_tokens = |n: usize| tokenize(&render_with(query, &ordered[..n], &spec, template)).len();

    let one = count_tokens(1);
    if one > budget {
        return Err(GenerationError::BudgetTooSmall { budget, needed: one });
    }
    // Token count grows with every added snippet, so the largest prefix that
    // fits can be found by bisection.
    let (mut lo, mut hi) = (1, ordered.len());
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if count_tokens(mid) <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    ordered.truncate(lo);
    Ok(Prompt {
        text: render_with(query, &ordered, &spec, template),
        manifest: ordered.iter().map(|s| (s.context_index, s.chunk_id.clone())).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snippet(i: usize, text: &str) -> Snippet {
        Snippet { chunk_id: format!("c{i}"), text: text.to_string(), rerank_score: 1.0 / i as f64, fused_rank: i, context_index: i }
    }

    #[test]
    fn default_template_is_valid() {
        PromptTemplate::parse(DEFAULT_LAYOUT).unwrap();
        assert_eq!(default_texts().version, "costar-v1");
        assert!(default_texts().regeneration_directive.contains("{failing}"));
        assert!(default_texts().refine_prompt.contains("{query}"));
    }

    #[test]
    fn two_snippets_six_sections() {
        let p = build_costar_prompt(
            "When is rent due?",
            &[snippet(1, "Rent is due monthly."), snippet(2, "Deposit is refundable.")],
            &CoStarSpec::default(),
            &PromptTemplate::default(),
        )
        .unwrap();
        assert!(p.text.contains("[1] Rent is due monthly."));
        assert!(p.text.contains("[2] Deposit is refundable."));
        let positions: Vec<usize> = SECTION_HEADERS.iter().map(|h| p.text.find(h).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(p.manifest.len(), 2);
        assert!(p.text.find("[1] Rent").unwrap() > positions[0] && p.text.find("[2] Dep").unwrap() < positions[1]);
    }

    #[test]
    fn no_snippets() {
        let err = build_costar_prompt("q", &[], &CoStarSpec::default(), &PromptTemplate::default()).unwrap_err();
        assert!(matches!(err, GenerationError::NoSnippets));
    }

    #[test]
    fn tiny_budget_fails() {
        let spec = CoStarSpec { max_context_tokens: 5, ..CoStarSpec::default() };
        let err = build_costar_prompt("q", &[snippet(1, "x")], &spec, &PromptTemplate::default()).unwrap_err();
        assert!(matches!(err, GenerationError::BudgetTooSmall { budget: 5, .. }));
    }

    #[test]
    fn placeholder_text_in_values_is_not_expanded() {
        let p = build_costar_prompt(
            "what is {objective}?",
            &[snippet(1, "literal {style} braces")],
            &CoStarSpec::default(),
            &PromptTemplate::default(),
        )
        .unwrap();
        assert!(p.text.contains("what is {objective}?"));
        assert!(p.text.contains("literal {style} braces"));
    }

    #[test]
    fn template_validation() {
        assert!(PromptTemplate::parse("{objective}{context}{style}{tone}{audience}{response}{snippets}{query}").is_err());
        assert!(PromptTemplate::parse("{context}{objective}{style}{tone}{audience}{response}{query}").is_err());
        assert!(PromptTemplate::parse("{context}{objective}{style}{tone}{audience}{response}{snippets}{query}").is_ok());
    }

    #[test]
    fn blank_sections_fall_back_to_defaults() {
        let spec = CoStarSpec { tone: "  ".into(), ..CoStarSpec::default() }.with_defaults();
        assert_eq!(spec.tone, CoStarSpec::default().tone);
    }
}
