//! Retrieval metrics (Recall@k, Precision@k), answer-quality metrics over
//! token alignments, and aggregated reports.

mod ir;
mod report;
mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ir::{evaluate_runs, precision_at_k, recall_at_k};
pub use report::{aggregate_report, merge_metrics, DatasetRow, MetricsReport, QueryMetrics, DEFAULT_K_GRID, TRACE_METRICS};
pub use trace::{
    evaluate_traces, strip_citation_markers, trace_completeness, trace_context_relevance, trace_hallucination,
    trace_utilization, STOPWORDS,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query {0} has no relevance judgments")]
    UnknownQuery(String),
    #[error("run for query {0} lists a chunk more than once")]
    DuplicateInRun(String),
    #[error("query {0} appears more than once in the run file")]
    DuplicateQuery(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("answer has no content tokens")]
    EmptyAnswer,
    #[error("record has no snippets")]
    EmptySnippets,
    #[error("record has no key points")]
    MissingKeyPoints,
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Relevance judgments: query id to the set of relevant chunk ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<I, S>(&mut self, query_id: impl Into<String>, relevant: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.judgments.entry(query_id.into()).or_default().extend(relevant.into_iter().map(Into::into));
    }

    /// The non-empty relevant set for `query_id`.
    pub fn relevant(&self, query_id: &str) -> Result<&BTreeSet<String>, EvalError> {
        self.judgments
            .get(query_id)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| EvalError::UnknownQuery(query_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrelLine {
    pub query_id: String,
    pub relevant: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub ranked: Vec<String>,
}

impl RunRecord {
    pub fn new(query_id: impl Into<String>, ranked: Vec<String>) -> Self {
        Self { query_id: query_id.into(), dataset: None, ranked }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let mut seen = BTreeSet::new();
        if self.ranked.iter().all(|id| seen.insert(id.as_str())) {
            Ok(())
        } else {
            Err(EvalError::DuplicateInRun(self.query_id.clone()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub query: String,
    pub answer: String,
    pub snippets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_points: Option<Vec<String>>,
    /// Human-graded accuracy on a 1 to 5 scale, passed through unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_accuracy: Option<f64>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            path: path.display().to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn load_runs(path: &Path) -> Result<Vec<RunRecord>, EvalError> {
    read_jsonl(path)
}

pub fn load_qrels(path: &Path) -> Result<Qrels, EvalError> {
    let mut qrels = Qrels::new();
    for line in read_jsonl::<QrelLine>(path)? {
        qrels.insert(line.query_id, line.relevant);
    }
    Ok(qrels)
}

pub fn load_traces(path: &Path) -> Result<Vec<TraceRecord>, EvalError> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    #[test]
    fn loaders_read_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run.jsonl");
        let mut f = std::fs::File::create(&run).unwrap();
        writeln!(f, r#"{{"query_id":"q1","dataset":"a","ranked":["d1","d2"]}}"#).unwrap();
        writeln!(f).unwrap();
        writeln!(f, r#"{{"query_id":"q2","ranked":[]}}"#).unwrap();
        let runs = load_runs(&run).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].dataset.as_deref(), Some("a"));

        let qrels = dir.path().join("qrels.jsonl");
        std::fs::write(&qrels, "{\"query_id\":\"q1\",\"relevant\":[\"d1\"]}\n{\"query_id\":\"q1\",\"relevant\":[\"d3\"]}\n")
            .unwrap();
        let q = load_qrels(&qrels).unwrap();
        assert_eq!(q.relevant("q1").unwrap().len(), 2);
        assert!(matches!(q.relevant("q9"), Err(EvalError::UnknownQuery(_))));

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, "{\"query_id\":\"q1\"}\n").unwrap();
        assert!(matches!(load_runs(&bad), Err(EvalError::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_ranked_ids_rejected() {
        assert!(RunRecord::new("q", vec!["a".into(), "a".into()]).validate().is_err());
        assert!(RunRecord::new("q", vec!["a".into(), "b".into()]).validate().is_ok());
    }
}
