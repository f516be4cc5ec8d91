use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use groundwork::ingest::Chunk;
use groundwork::providers::http::{DenyTransport, HttpRequest, HttpResponse, Transport, TransportError};
use groundwork_cli::{run_command_with, EXIT_OK, EXIT_REFUSED, EXIT_USAGE};
use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run(argv: &[&str], transport: Arc<dyn Transport>) -> Run {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_command_with(std::iter::once("groundwork").chain(argv.iter().copied()), Some(transport), &mut out, &mut err);
    Run { code, out: String::from_utf8(out).unwrap(), err: String::from_utf8(err).unwrap() }
}

fn deny() -> Arc<dyn Transport> {
    Arc::new(DenyTransport::default())
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.json"), format!("{{\"data_dir\": \"data\"{extra}}}")).unwrap();
        Self { dir }
    }

    fn config(&self) -> String {
        self.dir.path().join("config.json").to_str().unwrap().to_string()
    }

    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    fn build(&self) {
        let manifest = fixtures().join("manifest.jsonl");
        let r = run(&["ingest", "--manifest", manifest.to_str().unwrap(), "--config", &self.config()], deny());
        assert_eq!(r.code, EXIT_OK, "{}", r.err);
        assert!(r.out.starts_with("ingested 20 documents"), "{}", r.out);
        let r = run(&["index", "--config", &self.config()], deny());
        assert_eq!(r.code, EXIT_OK, "{}", r.err);
    }

    fn audit(&self) -> Vec<Value> {
        std::fs::read_to_string(self.data().join("audit/audit.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    fn chunks(&self) -> Vec<Chunk> {
        std::fs::read_to_string(self.data().join("corpus/chunks.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }
}

#[test]
fn offline_pipeline_cites_the_source_document() {
    let ws = Workspace::new("");
    ws.build();
    let question = "The monthly rent of 1,450 dollars is due on the first day of each calendar month.";
    let r = run(&["ask", "--config", &ws.config(), "--question", question], deny());
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let out: Value = serde_json::from_str(&r.out).unwrap();
    assert_eq!(out["status"], "grounded");
    assert!(out["answer"].as_str().unwrap().contains("[1]"));

    let rent_chunk = ws.chunks().into_iter().find(|c| c.text.contains(question)).unwrap();
    let first = &out["citations"][0];
    assert_eq!(first["chunk_id"], rent_chunk.chunk_id.as_str());
    assert!(first["support"].as_f64().unwrap() >= 0.6);
}

#[test]
fn each_ask_writes_one_redacted_answer_event() {
    let ws = Workspace::new("");
    ws.build();
    let question = "How many days notice does the landlord give before entering?";
    for _ in 0..2 {
        assert_eq!(run(&["ask", "--config", &ws.config(), "--question", question], deny()).code, EXIT_OK);
    }
    let events = ws.audit();
    let actions: Vec<&str> = events.iter().map(|e| e["action"].as_str().unwrap()).collect();
    assert_eq!(actions, ["ingest", "index", "answer", "answer"]);
    let seqs: Vec<u64> = events.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, [1, 2, 3, 4]);
    let answer = &events[2];
    assert_eq!(answer["query_hash"], groundwork::sha256_hex(question.as_bytes()));
    assert!(answer["answer_hash"].is_string());
    assert!(!answer["snippet_chunk_ids"].as_array().unwrap().is_empty());
    assert!(answer.get("query_text").is_none() && answer.get("answer_text").is_none());
}

#[test]
fn unredacted_audit_keeps_raw_text() {
    let ws = Workspace::new(", \"audit\": {\"redact\": false}");
    ws.build();
    let question = "Where is arbitration held?";
    assert_eq!(run(&["ask", "--config", &ws.config(), "--question", question], deny()).code, EXIT_OK);
    let events = ws.audit();
    let answer = events.last().unwrap();
    assert_eq!(answer["query_text"], question);
    assert!(answer["answer_text"].is_string());
}

#[test]
fn ask_without_index_fails() {
    let ws = Workspace::new("");
    let r = run(&["ask", "--config", &ws.config(), "--question", "anything"], deny());
    assert_eq!(r.code, 1);
    assert!(r.err.contains("index"), "{}", r.err);
}

/// OpenAI-style chat endpoint that returns the question as the refined query
/// and then answers with citations to text that no snippet contains.
struct FabricatingChat {
    calls: AtomicUsize,
}

impl Transport for FabricatingChat {
    fn post_json(&self, _request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        let content = if n == 0 {
            "security deposit return"
        } else {
            "Tenants receive a free parking space on the roof. [1] Deposits earn twelve percent interest. [2]"
        };
        let body = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]});
        Ok(HttpResponse::ok(body.to_string()))
    }
}

#[test]
fn strict_ask_refuses_fabricated_answers() {
    let ws = Workspace::new(
        ", \"llm\": {\"mode\": \"remote\", \"kind\": \"llm\", \"endpoint_url\": \"http://chat.invalid/v1/chat/completions\", \"model_name\": \"m\"}",
    );
    ws.build();
    let chat = Arc::new(FabricatingChat { calls: AtomicUsize::new(0) });
    let r = run(&["ask", "--config", &ws.config(), "--question", "Is the deposit returned?", "--strict"], chat.clone());
    assert_eq!(r.code, EXIT_REFUSED, "{}{}", r.out, r.err);
    let out: Value = serde_json::from_str(&r.out).unwrap();
    assert_eq!(out["status"], "refused");
    assert_eq!(out["answer"], "Insufficient evidence in the provided documents.");
    assert_eq!(out["report"]["rounds_used"], 3);
    assert_eq!(chat.calls.load(Ordering::SeqCst), 4);
    assert_eq!(ws.audit().last().unwrap()["status"], "refused");
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(run(&["ask", "--bogus"], deny()).code, EXIT_USAGE);
    assert_eq!(run(&["frobnicate"], deny()).code, EXIT_USAGE);
    let r = run(&["--help"], deny());
    assert_eq!(r.code, EXIT_OK);
    assert!(r.out.contains("ingest") && r.out.contains("verify-file"));
}

fn eval_args(extra: &[&str]) -> Vec<String> {
    let dir = fixtures().join("eval");
    let mut args: Vec<String> = vec![
        "eval".into(),
        "--run".into(),
        dir.join("run.jsonl").to_str().unwrap().into(),
        "--qrels".into(),
        dir.join("qrels.jsonl").to_str().unwrap().into(),
        "--k".into(),
        "1,2,4".into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn close(v: &Value, expected: f64) {
    let got = v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"));
    assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
}

#[test]
fn eval_json_matches_hand_computed_values() {
    let trace = fixtures().join("eval/trace.jsonl");
    let args = eval_args(&["--trace", trace.to_str().unwrap(), "--json"]);
    let r = run(&args.iter().map(String::as_str).collect::<Vec<_>>(), deny());
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let report: Value = serde_json::from_str(&r.out).unwrap();

    let leases = &report["datasets"][0];
    assert_eq!(leases["dataset"], "leases");
    assert_eq!(leases["n_queries"], 2);
    close(&leases["means"]["recall@1"], 0.25);
    close(&leases["means"]["precision@1"], 0.5);
    close(&leases["means"]["recall@4"], 0.75);
    close(&leases["means"]["precision@4"], 0.375);
    let privacy = &report["datasets"][1];
    close(&privacy["means"]["recall@2"], 1.0);
    close(&privacy["means"]["precision@2"], 0.5);

    close(&report["micro"]["recall@1"], 0.5);
    close(&report["macro_of_datasets"]["recall@1"], 0.625);
    close(&report["micro"]["precision@4"], (0.5 + 0.25 + 0.25) / 3.0);

    let q1 = report["per_query"].as_array().unwrap().iter().find(|q| q["query_id"] == "q1").unwrap();
    close(&q1["values"]["hallucination"], 0.0);
    close(&q1["values"]["utilization"], 10.0 / 14.0);
    close(&q1["values"]["completeness"], 0.5);
    close(&q1["values"]["context_relevance"], 1.0 / 3.0);
}

#[test]
fn eval_table_prints_percentages() {
    let args = eval_args(&[]);
    let r = run(&args.iter().map(String::as_str).collect::<Vec<_>>(), deny());
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let row = |name: &str| -> Vec<String> {
        r.out.lines().find(|l| l.split_whitespace().next() == Some(name)).unwrap().split_whitespace().map(String::from).collect()
    };
    assert_eq!(row("Dataset")[1..4], ["R@1", "R@2", "R@4"]);
    assert_eq!(row("leases")[1..4], ["25.00", "50.00", "75.00"]);
    assert_eq!(row("micro")[1], "50.00");
    assert_eq!(row("macro")[1], "62.50");
}

#[test]
fn eval_rejects_unknown_query() {
    let dir = tempfile::tempdir().unwrap();
    let run_file = dir.path().join("run.jsonl");
    std::fs::write(&run_file, "{\"query_id\": \"q9\", \"ranked\": [\"d1\"]}\n").unwrap();
    let qrels = fixtures().join("eval/qrels.jsonl");
    let r = run(&["eval", "--run", run_file.to_str().unwrap(), "--qrels", qrels.to_str().unwrap()], deny());
    assert_eq!(r.code, 1);
    assert!(r.err.contains("q9"), "{}", r.err);
}

#[test]
fn verify_file_reports_each_sentence() {
    let input = fixtures().join("eval/verify.json");
    let r = run(&["verify-file", "--input", input.to_str().unwrap()], deny());
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let report: Value = serde_json::from_str(&r.out).unwrap();
    let sentences = report["sentences"].as_array().unwrap();
    assert_eq!(sentences.len(), 2);
    assert_eq!(sentences[0]["pass"], true);
    assert_eq!(sentences[0]["supporting_chunk_id"], "lease-deposit-0");
    close(&sentences[0]["best_support"], 1.0);
    assert_eq!(sentences[1]["pass"], false);
    close(&sentences[1]["best_support"], 2.0 / 6.0);
    close(&report["unsupported_fraction"], 0.5);
    assert_eq!(report["all_pass"], false);
}
