//! External model boundary: embeddings, chat completion and reranking.
//!
//! Each capability is a trait with a remote HTTP client and a deterministic
//! offline implementation, so every pipeline path runs without a network.

pub mod http;
mod offline;
mod remote;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{
    send_with_retry, DenyTransport, HttpRequest, HttpResponse, RecordingTransport, ReplayTransport, ReqwestTransport,
    RetryPolicy, Transport, TransportError,
};
pub use offline::{offline_embed, ExtractiveGenerator, LexicalReranker, OfflineEmbedder, OfflineEmbedderSpec};
pub use remote::{RemoteChat, RemoteEmbedder, RemoteReranker};

use crate::index::EmbeddingVector;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("http request failed after {attempts} attempt(s) (status {status:?}): {message}")]
    Http { status: Option<u16>, attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("provider returned {found}-dimensional vectors after {expected}-dimensional ones")]
    DimensionDrift { expected: usize, found: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("unexpected provider response: {0}")]
    Protocol(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Embedding,
    Llm,
    Rerank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. The key itself
    /// never appears in configuration, logs or snapshots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env_var: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub temperature: f64,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_batch_size() -> usize {
    64
}

fn default_parallelism() -> usize {
    4
}

impl ProviderConfig {
    pub fn new(kind: ProviderKind, endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            kind,
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            api_key_env_var: None,
            timeout_secs: default_timeout(),
            batch_size: default_batch_size(),
            retry: RetryPolicy::default(),
            parallelism: default_parallelism(),
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.batch_size == 0 {
            return Err(ProviderError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(ProviderError::InvalidConfig("timeout must be positive".into()));
        }
        if self.parallelism == 0 {
            return Err(ProviderError::InvalidConfig("parallelism must be at least 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(ProviderError::InvalidConfig("retry.max_attempts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Reads the API key from the configured environment variable, if any.
    pub(crate) fn api_key(&self) -> Result<Option<ApiKey>, ProviderError> {
        match &self.api_key_env_var {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(|k| Some(ApiKey(k)))
                .map_err(|_| ProviderError::MissingApiKey(var.clone())),
        }
    }
}

/// API key with a redacting `Debug`.
#[derive(Clone)]
pub(crate) struct ApiKey(String);

impl ApiKey {
    pub(crate) fn bearer(&self) -> String {
        format!("Bearer {}", self.0)
    }
}

impl std::fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

pub trait Embedder: Send + Sync {
    /// One L2-normalised vector per input, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

pub trait ChatModel: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError>;

    /// Whether query refinement should be delegated to this model. The
    /// offline generator answers from context only and cannot rewrite queries.
    fn refines_queries(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankHit {
    pub index: usize,
    pub relevance_score: f64,
}

pub trait Reranker: Send + Sync {
    fn rerank(&self, query: &str, documents: &[String], top_n: usize) -> Result<Vec<RerankHit>, ProviderError>;
}

pub fn embed_batch(texts: &[String], provider: &dyn Embedder) -> Result<Vec<EmbeddingVector>, ProviderError> {
    if texts.is_empty() || texts.iter().any(|t| t.trim().is_empty()) {
        return Err(ProviderError::EmptyInput);
    }
    let vectors = provider.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(ProviderError::Protocol(format!("{} vectors for {} inputs", vectors.len(), texts.len())));
    }
    Ok(vectors)
}

pub fn llm_complete(prompt: &str, provider: &dyn ChatModel) -> Result<String, ProviderError> {
    if prompt.trim().is_empty() {
        return Err(ProviderError::EmptyInput);
    }
    provider.complete(prompt)
}

/// Reranks `documents` against `query`; at most `top_n` hits, best first.
pub fn rerank_call(
    query: &str,
    documents: &[String],
    top_n: usize,
    provider: &dyn Reranker,
) -> Result<Vec<RerankHit>, ProviderError> {
    if documents.is_empty() || query.trim().is_empty() {
        return Err(ProviderError::EmptyInput);
    }
    let top_n = top_n.min(documents.len());
    let mut hits = provider.rerank(query, documents, top_n)?;
    if hits.iter().any(|h| h.index >= documents.len() || !h.relevance_score.is_finite()) {
        return Err(ProviderError::Protocol("rerank result out of range".into()));
    }
    hits.sort_by(|a, b| b.relevance_score.total_cmp(&a.relevance_score).then(a.index.cmp(&b.index)));
    hits.dedup_by_key(|h| h.index);
    hits.truncate(top_n);
    Ok(hits)
}
