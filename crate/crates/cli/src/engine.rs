//! Builds providers from configuration and runs the ingest, index and ask
//! pipelines.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use groundwork::generation::{CoStarSpec, PromptTemplate};
use groundwork::index::HybridIndex;
use groundwork::ingest::{chunk_document, load_document, Chunk, Document, ManifestEntry};
use groundwork::providers::http::{ReqwestTransport, Transport};
use groundwork::providers::{
    embed_batch, ChatModel, Embedder, ExtractiveGenerator, LexicalReranker, OfflineEmbedder, RemoteChat,
    RemoteEmbedder, RemoteReranker, Reranker,
};
use groundwork::retrieval::{hybrid_retrieve, refine_query, rerank_candidates, RefinedQuery, Snippet};
use groundwork::verify::{grounded_answer_loop, FinalAnswer, SupportPolicy};
use groundwork::sha256_hex;
use serde::Serialize;

use crate::config::{resolve, EmbeddingSetup, EngineConfig, LlmSetup, RerankMode};
use crate::lock::FileLock;
use crate::store::{self, DataLayout};

pub struct Engine {
    pub config: EngineConfig,
    pub layout: DataLayout,
    base_dir: PathBuf,
    transport: Option<Arc<dyn Transport>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CitationOut {
    pub sentence: String,
    pub chunk_id: Option<String>,
    pub support: f64,
}

/// The JSON printed by `ask`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AskOutput {
    pub status: String,
    pub answer: String,
    pub citations: Vec<CitationOut>,
    pub report: groundwork::verify::VerificationReport,
}

pub struct AskOutcome {
    pub refined: RefinedQuery,
    pub snippets: Vec<Snippet>,
    pub answer: FinalAnswer,
}

impl AskOutcome {
    pub fn output(&self) -> AskOutput {
        AskOutput {
            status: self.answer.status.as_str().to_string(),
            answer: self.answer.text.clone(),
            citations: self
                .answer
                .citations
                .iter()
                .map(|c| CitationOut { sentence: c.sentence.clone(), chunk_id: c.chunk_id.clone(), support: c.support })
                .collect(),
            report: self.answer.report.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestSummary {
    pub documents: usize,
    pub chunks: usize,
}

impl Engine {
    /// `base_dir` anchors relative paths in the configuration. Remote
    /// providers use `transport` when given, otherwise a real HTTP client.
    pub fn new(config: EngineConfig, base_dir: &Path, transport: Option<Arc<dyn Transport>>) -> Result<Self> {
        config.validate()?;
        let layout = DataLayout::new(resolve(base_dir, &config.data_dir));
        Ok(Self { config, layout, base_dir: base_dir.to_path_buf(), transport })
    }

    fn transport(&self) -> Result<Arc<dyn Transport>> {
        match &self.transport {
            Some(t) => Ok(t.clone()),
            None => Ok(Arc::new(ReqwestTransport::new()?)),
        }
    }

    pub fn embedder(&self) -> Result<Box<dyn Embedder>> {
        Ok(match &self.config.embedding {
            EmbeddingSetup::Offline(spec) => Box::new(OfflineEmbedder::new(*spec)?),
            EmbeddingSetup::Remote(c) => Box::new(RemoteEmbedder::new(c.clone(), self.transport()?)?),
        })
    }

    pub fn chat(&self) -> Result<Box<dyn ChatModel>> {
        Ok(match &self.config.llm {
            LlmSetup::Offline => Box::new(ExtractiveGenerator::default()),
            LlmSetup::Remote(c) => Box::new(RemoteChat::new(c.clone(), self.transport()?)?),
        })
    }

    pub fn reranker(&self) -> Result<Box<dyn Reranker>> {
        Ok(match &self.config.rerank.provider {
            RerankMode::Offline => Box::new(LexicalReranker),
            RerankMode::Remote(c) => Box::new(RemoteReranker::new(c.clone(), self.transport()?)?),
        })
    }

    pub fn template(&self) -> Result<PromptTemplate> {
        match &self.config.prompt.template_path {
            Some(p) => {
                let path = resolve(&self.base_dir, p);
                PromptTemplate::load(&path).with_context(|| format!("loading prompt template {}", path.display()))
            }
            None => Ok(PromptTemplate::default()),
        }
    }

    pub fn costar(&self) -> CoStarSpec {
        self.config.prompt.costar.clone().with_defaults()
    }

    /// Loads every manifest entry, chunks it and merges the result into the
    /// corpus store. Documents already in the store are replaced.
    pub fn ingest(&self, manifest: &Path) -> Result<IngestSummary> {
        let entries: Vec<ManifestEntry> = store::read_jsonl(manifest)?;
        anyhow::ensure!(!entries.is_empty(), "manifest {} lists no documents", manifest.display());
        let manifest_dir = manifest.parent().unwrap_or(Path::new("."));
        let mut loaded: Vec<Document> = Vec::with_capacity(entries.len());
        for entry in &entries {
            let path = resolve(manifest_dir, Path::new(entry.uri.strip_prefix("file://").unwrap_or(&entry.uri)));
            let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let mut doc = load_document(&bytes, entry.format, &entry.uri)
                .with_context(|| format!("loading {}", entry.uri))?;
            doc.metadata.extend(entry.metadata.clone());
            loaded.push(doc);
        }

        self.layout.create_dirs()?;
        let _lock = FileLock::acquire(&self.layout.corpus_lock())?;
        let mut documents: BTreeMap<String, Document> =
            store::load_documents(&self.layout)?.into_iter().map(|d| (d.doc_id.clone(), d)).collect();
        for doc in loaded {
            documents.insert(doc.doc_id.clone(), doc);
        }
        let mut chunks: Vec<Chunk> = Vec::new();
        for doc in documents.values() {
            chunks.extend(chunk_document(doc, &self.config.chunking)?);
        }
        let documents: Vec<Document> = documents.into_values().collect();
        store::write_jsonl(&self.layout.documents(), &documents)?;
        store::write_jsonl(&self.layout.chunks(), &chunks)?;
        Ok(IngestSummary { documents: documents.len(), chunks: chunks.len() })
    }

    /// Embeds the chunk store and writes a fresh snapshot.
    pub fn build_index(&self) -> Result<HybridIndex> {
        let chunks = store::load_chunks(&self.layout)?;
        anyhow::ensure!(!chunks.is_empty(), "chunk store is empty");
        let embedder = self.embedder()?;
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let vectors = embed_batch(&texts, embedder.as_ref())?;
        let mut index = HybridIndex::new(self.config.index_params())?;
        for (chunk, vector) in chunks.into_iter().zip(&vectors) {
            index.add(chunk, vector)?;
        }
        std::fs::create_dir_all(self.layout.snapshot().parent().expect("snapshot has a parent"))?;
        let _lock = FileLock::acquire(&self.layout.index_lock())?;
        index.save(&self.layout.snapshot())?;
        Ok(index)
    }

    pub fn load_index(&self) -> Result<HybridIndex> {
        let path = self.layout.snapshot();
        HybridIndex::load(&path).with_context(|| format!("loading index {} (run `index` first?)", path.display()))
    }

    pub fn ask(&self, index: &HybridIndex, question: &str, strict: bool) -> Result<AskOutcome> {
        let chat = self.chat()?;
        let embedder = self.embedder()?;
        let reranker = self.reranker()?;
        let refined = refine_query(question, chat.as_ref())?;
        let candidates = hybrid_retrieve(&refined, index, embedder.as_ref(), &self.config.fusion)?;
        let snippets = if candidates.is_empty() {
            Vec::new()
        } else {
            rerank_candidates(&refined, &candidates, index, reranker.as_ref(), &self.config.fusion, self.config.rerank.fallback)?
                .snippets
        };
        let policy = SupportPolicy { strict: strict || self.config.support.strict, ..self.config.support };
        let answer =
            grounded_answer_loop(&refined.refined, &snippets, chat.as_ref(), &self.costar(), &self.template()?, &policy)?;
        Ok(AskOutcome { refined, snippets, answer })
    }
}

pub fn content_hash(text: &str) -> String {
    sha256_hex(text.as_bytes())
}
