//! HTTP clients speaking the OpenAI-compatible embedding and chat formats
//! and the Cohere-compatible rerank format.

use std::sync::Arc;

use serde::Deserialize;
use serde_json::json;

use super::http::{send_with_retry, HttpRequest, Transport};
use super::{ApiKey, ChatModel, Embedder, ProviderConfig, ProviderError, ProviderKind, RerankHit, Reranker};
use crate::index::EmbeddingVector;

struct Client {
    config: ProviderConfig,
    key: Option<ApiKey>,
    transport: Arc<dyn Transport>,
}

impl Client {
    fn new(config: ProviderConfig, expected: ProviderKind, transport: Arc<dyn Transport>) -> Result<Self, ProviderError> {
        config.validate()?;
        if config.kind != expected {
            return Err(ProviderError::InvalidConfig(format!(
                "expected a {expected:?} provider, got {:?}",
                config.kind
            )));
        }
        let key = config.api_key()?;
        Ok(Self { config, key, transport })
    }

    fn post(&self, body: serde_json::Value) -> Result<serde_json::Value, ProviderError> {
        let mut headers = Vec::new();
        if let Some(key) = &self.key {
            headers.push(("authorization".to_string(), key.bearer()));
        }
        let request = HttpRequest { url: self.config.endpoint_url.clone(), headers, body, timeout: self.config.timeout() };
        let response = send_with_retry(self.transport.as_ref(), &request, &self.config.retry)?;
        serde_json::from_str(&response.body).map_err(|e| ProviderError::Protocol(e.to_string()))
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

pub struct RemoteEmbedder {
    client: Client,
}

impl RemoteEmbedder {
    pub fn new(config: ProviderConfig, transport: Arc<dyn Transport>) -> Result<Self, ProviderError> {
        Ok(Self { client: Client::new(config, ProviderKind::Embedding, transport)? })
    }

    fn embed_one_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let body = json!({ "model": self.client.config.model_name, "input": texts });
        let raw = self.client.post(body)?;
        let mut parsed: EmbeddingResponse =
            serde_json::from_value(raw).map_err(|e| ProviderError::Protocol(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(ProviderError::Protocol(format!(
                "{} embeddings returned for {} inputs",
                parsed.data.len(),
                texts.len()
            )));
        }
        if parsed.data.iter().all(|d| d.index.is_some()) {
            parsed.data.sort_by_key(|d| d.index);
        }
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}

impl Embedder for RemoteEmbedder {
    /// Splits the input into `batch_size` requests and keeps at most
    /// `parallelism` of them in flight.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let batches: Vec<&[String]> = texts.chunks(self.client.config.batch_size).collect();
        let mut raw: Vec<Vec<f64>> = Vec::with_capacity(texts.len());
        for wave in batches.chunks(self.client.config.parallelism) {
            let results: Vec<Result<Vec<Vec<f64>>, ProviderError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = wave.iter().map(|batch| scope.spawn(move || self.embed_one_batch(batch))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(ProviderError::Protocol("embedding worker panicked".into()))))
                    .collect()
            });
            for r in results {
                raw.extend(r?);
            }
        }
        let expected = raw.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(raw.len());
        for v in raw {
            if v.len() != expected {
                return Err(ProviderError::DimensionDrift { expected, found: v.len() });
            }
            let v = EmbeddingVector(v);
            out.push(v.normalized().ok_or_else(|| ProviderError::Protocol("zero or non-finite embedding".into()))?);
        }
        Ok(out)
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub struct RemoteChat {
    client: Client,
}

impl RemoteChat {
    pub fn new(config: ProviderConfig, transport: Arc<dyn Transport>) -> Result<Self, ProviderError> {
        Ok(Self { client: Client::new(config, ProviderKind::Llm, transport)? })
    }
}

impl ChatModel for RemoteChat {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.client.config.model_name,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": self.client.config.temperature,
        });
        let raw = self.client.post(body)?;
        let parsed: ChatResponse = serde_json::from_value(raw).map_err(|e| ProviderError::Protocol(e.to_string()))?;
        if let Some(usage) = &parsed.usage {
            log::info!(
                "chat completion model={} prompt_tokens={} completion_tokens={}",
                self.client.config.model_name,
                usage.prompt_tokens,
                usage.completion_tokens
            );
        }
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Protocol("chat response has no content".into()))
    }
}

#[derive(Deserialize)]
struct RerankResponse {
    results: Vec<RerankHit>,
}

pub struct RemoteReranker {
    client: Client,
}

impl RemoteReranker {
    pub fn new(config: ProviderConfig, transport: Arc<dyn Transport>) -> Result<Self, ProviderError> {
        Ok(Self { client: Client::new(config, ProviderKind::Rerank, transport)? })
    }
}

impl Reranker for RemoteReranker {
    fn rerank(&self, query: &str, documents: &[String], top_n: usize) -> Result<Vec<RerankHit>, ProviderError> {
        let body = json!({
            "model": self.client.config.model_name,
            "query": query,
            "documents": documents,
            "top_n": top_n,
        });
        let raw = self.client.post(body)?;
        let parsed: RerankResponse = serde_json::from_value(raw).map_err(|e| ProviderError::Protocol(e.to_string()))?;
        Ok(parsed.results)
    }
}
