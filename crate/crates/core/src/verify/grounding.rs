use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{verify_draft, SupportPolicy, VerificationReport, VerifyError};
use crate::generation::{
    build_costar_prompt, default_texts, parse_answer_with, CoStarSpec, DraftAnswer, GenerationError,
    InvalidCitationMode, PromptTemplate,
};
use crate::providers::{llm_complete, ChatModel, ProviderError};
use crate::retrieval::Snippet;

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Policy(#[from] VerifyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStatus {
    Grounded,
    BestEffort,
    Refused,
}

impl AnswerStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AnswerStatus::Grounded => "grounded",
            AnswerStatus::BestEffort => "best_effort",
            AnswerStatus::Refused => "refused",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Citation {
    pub sentence: String,
    pub chunk_id: Option<String>,
    pub support: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// 1.0 for a round whose answer was empty.
    pub unsupported_fraction: f64,
    pub all_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub status: AnswerStatus,
    pub text: String,
    pub citations: Vec<Citation>,
    pub report: VerificationReport,
    pub rounds: Vec<RoundRecord>,
}

struct Round {
    text: String,
    report: VerificationReport,
    fraction: f64,
}

fn empty_report(rounds_used: usize) -> VerificationReport {
    VerificationReport { sentences: Vec::new(), rounds_used, all_pass: true, unsupported_fraction: 0.0, empty: true }
}

fn citations(report: &VerificationReport) -> Vec<Citation> {
    report
        .sentences
        .iter()
        .map(|v| Citation { sentence: v.text.clone(), chunk_id: v.supporting_chunk_id.clone(), support: v.best_support })
        .collect()
}

/// Parses a draft, discarding citation markers that point outside the
/// manifest instead of failing the round. Returns `None` for empty answers.
fn parse_round(raw: &str, manifest: &std::collections::BTreeMap<usize, String>) -> Option<DraftAnswer> {
    match parse_answer_with(raw, manifest, InvalidCitationMode::Reject) {
        Ok(d) => Some(d),
        Err(GenerationError::InvalidCitation(i)) => {
            log::warn!("draft cites unknown context index [{i}]; dropping invalid markers");
            parse_answer_with(raw, manifest, InvalidCitationMode::Drop).ok()
        }
        Err(_) => None,
    }
}

fn directive(failing: &[String]) -> String {
    let list = if failing.is_empty() {
        "- (the previous draft was empty)".to_string()
    } else {
        failing.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n")
    };
    default_texts().regeneration_directive.replace("{failing}", &list)
}

/// Generates an answer and regenerates it until every sentence is supported
/// by the context or `max_rounds` is spent.
///
/// Sentences that fail verification are quoted back to the model in the
/// Response section of the next prompt. When rounds run out, strict mode
/// refuses with a fixed text, otherwise the round with the smallest
/// unsupported fraction is returned (the later round on ties).
pub fn grounded_answer_loop(
    query: &str,
    snippets: &[Snippet],
    llm: &dyn ChatModel,
    spec: &CoStarSpec,
    template: &PromptTemplate,
    policy: &SupportPolicy,
) -> Result<FinalAnswer, GroundingError> {
    policy.validate()?;
    let texts = default_texts();
    if snippets.is_empty() {
        if policy.strict {
            return Ok(FinalAnswer {
                status: AnswerStatus::Refused,
                text: texts.refusal_text.clone(),
                citations: Vec::new(),
                report: empty_report(0),
                rounds: Vec::new(),
            });
        }
        return Err(GenerationError::NoSnippets.into());
    }

    let base = spec.clone().with_defaults();
    let mut failing: Option<Vec<String>> = None;
    let mut history: Vec<Round> = Vec::new();
    let mut records = Vec::new();

    for round in 1..=policy.max_rounds {
        let mut spec_r = base.clone();
        if policy.strict {
            spec_r.response_rules = format!("{}\n{}", spec_r.response_rules, texts.strict_rule);
        }
        if let Some(f) = &failing {
            spec_r.response_rules = format!("{}\n\n{}", spec_r.response_rules, directive(f));
        }
        let prompt = build_costar_prompt(query, snippets, &spec_r, template)?;
        let raw = llm_complete(&prompt.text, llm)?;
        let in_prompt: Vec<Snippet> =
            snippets.iter().filter(|s| prompt.manifest.contains_key(&s.context_index)).cloned().collect();

        let (mut report, fraction) = match parse_round(&raw, &prompt.manifest) {
            Some(draft) => {
                let report = verify_draft(&draft, &in_prompt, policy);
                let fraction = report.unsupported_fraction;
                (report, fraction)
            }
            None => (empty_report(round), 1.0),
        };
        report.rounds_used = round;
        let grounded = !report.empty && report.all_pass;
        records.push(RoundRecord { round, unsupported_fraction: fraction, all_pass: grounded });
        log::debug!("grounding round {round}: unsupported fraction {fraction:.4}");

        if grounded {
            return Ok(FinalAnswer {
                status: AnswerStatus::Grounded,
                text: raw.trim().to_string(),
                citations: citations(&report),
                report,
                rounds: records,
            });
        }
        failing = Some(report.failing().map(|v| v.text.clone()).collect());
        history.push(Round { text: raw.trim().to_string(), report, fraction });
    }

    let rounds_used = policy.max_rounds;
    if policy.strict {
        let mut report = history.pop().map(|r| r.report).unwrap_or_else(|| empty_report(rounds_used));
        report.rounds_used = rounds_used;
        return Ok(FinalAnswer {
            status: AnswerStatus::Refused,
            text: texts.refusal_text.clone(),
            citations: Vec::new(),
            report,
            rounds: records,
        });
    }
    let best = history
        .into_iter()
        .reduce(|best, r| if r.fraction <= best.fraction { r } else { best })
        .expect("max_rounds >= 1");
    let mut report = best.report;
    report.rounds_used = rounds_used;
    Ok(FinalAnswer {
        status: AnswerStatus::BestEffort,
        text: best.text,
        citations: citations(&report),
        report,
        rounds: records,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::providers::ExtractiveGenerator;

    fn snippet(i: usize, text: &str) -> Snippet {
        Snippet { chunk_id: format!("c{i}"), text: text.into(), rerank_score: 0.0, fused_rank: i, context_index: i }
    }

    fn context() -> Vec<Snippet> {
        vec![
            snippet(1, "The rent is due on the first day of each month."),
            snippet(2, "The security deposit is refundable within thirty days."),
            snippet(3, "Pets are allowed with written consent."),
        ]
    }

    struct Scripted {
        replies: Mutex<Vec<String>>,
        prompts: Mutex<Vec<String>>,
    }

    impl Scripted {
        fn new(replies: &[&str]) -> Self {
            Self {
                replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()),
                prompts: Mutex::new(Vec::new()),
            }
        }
    }

    impl ChatModel for Scripted {
        fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
            self.prompts.lock().unwrap().push(prompt.to_string());
            Ok(self.replies.lock().unwrap().pop().unwrap_or_default())
        }
    }

    fn run(llm: &dyn ChatModel, policy: SupportPolicy) -> FinalAnswer {
        grounded_answer_loop("When is rent due?", &context(), llm, &CoStarSpec::default(), &PromptTemplate::default(), &policy)
            .unwrap()
    }

    #[test]
    fn extractive_generator_grounds_in_one_round() {
        let a = run(&ExtractiveGenerator::default(), SupportPolicy::default());
        assert_eq!(a.status, AnswerStatus::Grounded);
        assert_eq!(a.report.rounds_used, 1);
        assert_eq!(a.citations.len(), 3);
        assert_eq!(a.citations[0].chunk_id.as_deref(), Some("c1"));
    }

    const FAB1: &str = "The rent is due on the first day of each month. [1] Tenants may sublet freely. [1]";
    const FAB2: &str = "Tenants may sublet freely. [1] Utilities are free. [2]";
    const FAB3: &str = "The rent is due on the first day of each month. [1] Pets are allowed with written consent. [3] \
                        The landlord pays all taxes. [2]";

    #[test]
    fn strict_fabrication_refuses() {
        let llm = Scripted::new(&[FAB1, FAB2, FAB3]);
        let a = run(&llm, SupportPolicy::strict());
        assert_eq!(a.status, AnswerStatus::Refused);
        assert_eq!(a.text, "Insufficient evidence in the provided documents.");
        assert_eq!(a.rounds.len(), 3);
        assert_eq!(a.report.rounds_used, 3);
        let prompts = llm.prompts.lock().unwrap();
        assert!(prompts[0].contains("Answer only from the context."));
        assert!(prompts[1].contains("- Tenants may sublet freely."));
        assert!(prompts[1].contains("restate using only wording supported by the numbered context, or remove the claim"));
    }

    #[test]
    fn best_effort_picks_lowest_fraction() {
        // Fractions per round: 1/2, 2/2, 1/3.
        let a = run(&Scripted::new(&[FAB1, FAB2, FAB3]), SupportPolicy::default());
        assert_eq!(a.status, AnswerStatus::BestEffort);
        let fractions: Vec<f64> = a.rounds.iter().map(|r| r.unsupported_fraction).collect();
        assert_eq!(fractions, [0.5, 1.0, 1.0 / 3.0]);
        assert!(a.text.starts_with("The rent is due") && a.text.contains("landlord"));
        assert!((a.report.unsupported_fraction - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_later_round() {
        let second = "Tenants may sublet freely. [1] Pets are allowed with written consent. [3]";
        let a = run(&Scripted::new(&[FAB1, second, FAB2]), SupportPolicy::default());
        assert_eq!(a.text, second);
    }

    #[test]
    fn empty_answer_counts_as_failed_round() {
        let ok = "The rent is due on the first day of each month. [1]";
        let a = run(&Scripted::new(&["", ok]), SupportPolicy::default());
        assert_eq!(a.status, AnswerStatus::Grounded);
        assert_eq!(a.rounds[0].unsupported_fraction, 1.0);
        assert_eq!(a.report.rounds_used, 2);
    }

    #[test]
    fn invalid_markers_are_dropped() {
        let a = run(&Scripted::new(&["The rent is due on the first day of each month. [1][7]"]), SupportPolicy::default());
        assert_eq!(a.status, AnswerStatus::Grounded);
        assert_eq!(a.report.sentences[0].cited, [1]);
    }

    #[test]
    fn empty_context() {
        let llm = ExtractiveGenerator::default();
        let strict = grounded_answer_loop(
            "q",
            &[],
            &llm,
            &CoStarSpec::default(),
            &PromptTemplate::default(),
            &SupportPolicy::strict(),
        )
        .unwrap();
        assert_eq!(strict.status, AnswerStatus::Refused);
        assert!(strict.rounds.is_empty());
        let lax =
            grounded_answer_loop("q", &[], &llm, &CoStarSpec::default(), &PromptTemplate::default(), &SupportPolicy::default());
        assert!(matches!(lax, Err(GroundingError::Generation(GenerationError::NoSnippets))));
    }
}
