use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use groundwork::eval::{
    aggregate_report, evaluate_runs, evaluate_traces, load_qrels, load_runs, load_traces, merge_metrics, DEFAULT_K_GRID,
};
use groundwork::generation::parse_answer;
use groundwork::providers::http::Transport;
use groundwork::retrieval::Snippet;
use groundwork::verify::{verify_draft, AnswerStatus, SupportPolicy};
use serde::Deserialize;

use crate::audit::{append_audit, AuditAction, AuditEvent};
use crate::config::EngineConfig;
use crate::engine::{content_hash, Engine};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_REFUSED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "groundwork", version, about = "Grounded question answering over a local document corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load the documents listed in a manifest into the chunk store.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `data_dir` from the configuration.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Embed the chunk store and write the index snapshot.
    Index {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Answer a question from the indexed corpus.
    Ask {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        question: String,
        /// Refuse instead of returning a partially supported answer.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Score a run file against relevance judgments.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_K_GRID)]
        k: Vec<usize>,
        /// Support threshold for key-point completeness.
        #[arg(long, default_value_t = SupportPolicy::default().threshold)]
        threshold: f64,
        /// Print the JSON report instead of the table.
        #[arg(long)]
        json: bool,
        /// Write the JSON report under `reports/` and audit the run.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check a drafted answer against its snippets.
    VerifyFile {
        #[arg(long)]
        input: PathBuf,
    },
}

fn config_base(path: &Path) -> PathBuf {
    path.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn engine_from(
    config: Option<&Path>,
    data_dir: Option<PathBuf>,
    transport: Option<Arc<dyn Transport>>,
) -> Result<Engine> {
    let (mut cfg, base) = match config {
        Some(p) => (EngineConfig::load(p)?, config_base(p)),
        None => (EngineConfig::default(), PathBuf::from(".")),
    };
    if let Some(d) = data_dir {
        cfg.data_dir = std::path::absolute(d)?;
    }
    Engine::new(cfg, &base, transport)
}

fn audit(engine: &Engine, event: AuditEvent) -> Result<()> {
    append_audit(event, &engine.layout.audit_log())?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SnippetInput {
    Text(String),
    Full { text: String, chunk_id: Option<String> },
}

#[derive(Deserialize)]
struct VerifyInput {
    answer: String,
    snippets: Vec<SnippetInput>,
    #[serde(default)]
    policy: SupportPolicy,
}

fn verify_file(input: &Path, out: &mut dyn Write) -> Result<i32> {
    let raw = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let parsed: VerifyInput = serde_json::from_str(&raw).context("verify input must be {answer, snippets[, policy]}")?;
    parsed.policy.validate()?;
    let snippets: Vec<Snippet> = parsed
        .snippets
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let (text, chunk_id) = match s {
                SnippetInput::Text(t) => (t, None),
                SnippetInput::Full { text, chunk_id } => (text, chunk_id),
            };
            Snippet {
                chunk_id: chunk_id.unwrap_or_else(|| format!("snippet-{}", i + 1)),
                text,
                rerank_score: 0.0,
                fused_rank: i + 1,
                context_index: i + 1,
            }
        })
        .collect();
    let manifest: BTreeMap<usize, String> = snippets.iter().map(|s| (s.context_index, s.chunk_id.clone())).collect();
    let draft = parse_answer(&parsed.answer, &manifest)?;
    let report = verify_draft(&draft, &snippets, &parsed.policy);
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(EXIT_OK)
}

fn execute(cli: Cli, transport: Option<Arc<dyn Transport>>, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Ingest { manifest, config, data_dir } => {
            let engine = engine_from(config.as_deref(), data_dir, transport)?;
            let summary = engine.ingest(&manifest)?;
            audit(&engine, AuditEvent::new(AuditAction::Ingest, "ok"))?;
            writeln!(out, "ingested {} documents into {} chunks", summary.documents, summary.chunks)?;
            Ok(EXIT_OK)
        }
        Command::Index { config, data_dir } => {
            let engine = engine_from(Some(&config), data_dir, transport)?;
            let index = engine.build_index()?;
            audit(&engine, AuditEvent::new(AuditAction::Index, "ok"))?;
            writeln!(out, "indexed {} chunks into {}", index.len(), engine.layout.snapshot().display())?;
            Ok(EXIT_OK)
        }
        Command::Ask { config, question, strict, data_dir } => {
            let engine = engine_from(Some(&config), data_dir, transport)?;
            let index = engine.load_index()?;
            let outcome = engine.ask(&index, &question, strict);
            let mut event = AuditEvent::new(AuditAction::Answer, "error");
            event.query_hash = Some(content_hash(&question));
            if !engine.config.audit.redact {
                event.query_text = Some(question.clone());
            }
            let outcome = match outcome {
                Ok(o) => o,
                Err(e) => {
                    audit(&engine, event)?;
                    return Err(e);
                }
            };
            event.status = outcome.answer.status.as_str().to_string();
            event.snippet_chunk_ids = outcome.snippets.iter().map(|s| s.chunk_id.clone()).collect();
            event.answer_hash = Some(content_hash(&outcome.answer.text));
            if !engine.config.audit.redact {
                event.answer_text = Some(outcome.answer.text.clone());
            }
            audit(&engine, event)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&outcome.output())?)?;
            Ok(if outcome.answer.status == AnswerStatus::Refused { EXIT_REFUSED } else { EXIT_OK })
        }
        Command::Eval { run, qrels, trace, k, threshold, json, config } => {
            anyhow::ensure!(!k.is_empty() && k.iter().all(|&k| k > 0), "--k needs positive integers");
            let runs = load_runs(&run)?;
            let qrels = load_qrels(&qrels)?;
            let mut rows = evaluate_runs(&runs, &qrels, &k)?;
            if let Some(trace) = trace {
                rows.extend(evaluate_traces(&load_traces(&trace)?, threshold)?);
            }
            let report = aggregate_report(&merge_metrics(rows), &k)?;
            if json {
                writeln!(out, "{}", report.to_json())?;
            } else {
                write!(out, "{}", report.to_table())?;
            }
            if let Some(config) = config {
                let engine = engine_from(Some(&config), None, transport)?;
                std::fs::create_dir_all(engine.layout.reports())?;
                let path = engine
                    .layout
                    .reports()
                    .join(format!("eval-{}.json", chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ")));
                std::fs::write(&path, report.to_json() + "\n")?;
                audit(&engine, AuditEvent::new(AuditAction::Eval, "ok"))?;
            }
            Ok(EXIT_OK)
        }
        Command::VerifyFile { input } => verify_file(&input, out),
    }
}

/// Runs one command with explicit output streams and, optionally, the
/// transport remote providers should use.
pub fn run_command_with<I, T>(
    argv: I,
    transport: Option<Arc<dyn Transport>>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match execute(cli, transport, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_FAILURE
        }
    }
}

/// Runs one command against the process's standard streams.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_command_with(argv, None, &mut stdout.lock(), &mut stderr.lock())
}
