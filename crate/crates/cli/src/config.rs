use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use groundwork::generation::CoStarSpec;
use groundwork::index::{Bm25Params, HnswParams, IndexParams};
use groundwork::ingest::ChunkingPolicy;
use groundwork::providers::{OfflineEmbedderSpec, ProviderConfig, ProviderKind};
use groundwork::retrieval::FusionPolicy;
use groundwork::verify::SupportPolicy;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EmbeddingSetup {
    Offline(OfflineEmbedderSpec),
    Remote(ProviderConfig),
}

impl Default for EmbeddingSetup {
    fn default() -> Self {
        EmbeddingSetup::Offline(OfflineEmbedderSpec::default())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LlmSetup {
    #[default]
    Offline,
    Remote(ProviderConfig),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum RerankMode {
    #[default]
    Offline,
    Remote(ProviderConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankSetup {
    pub provider: RerankMode,
    /// Keep the fused order when the reranker fails instead of aborting.
    pub fallback: bool,
}

impl Default for RerankSetup {
    fn default() -> Self {
        Self { provider: RerankMode::Offline, fallback: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptSetup {
    /// Prompt layout file; the bundled layout is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_path: Option<PathBuf>,
    pub costar: CoStarSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditSetup {
    /// Store hashes only. When off, raw question and answer text is logged too.
    pub redact: bool,
}

impl Default for AuditSetup {
    fn default() -> Self {
        Self { redact: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub data_dir: PathBuf,
    pub chunking: ChunkingPolicy,
    pub bm25: Bm25Params,
    pub hnsw: HnswParams,
    pub fusion: FusionPolicy,
    pub support: SupportPolicy,
    pub prompt: PromptSetup,
    pub embedding: EmbeddingSetup,
    pub llm: LlmSetup,
    pub rerank: RerankSetup,
    pub audit: AuditSetup,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            chunking: ChunkingPolicy::default(),
            bm25: Bm25Params::default(),
            hnsw: HnswParams::default(),
            fusion: FusionPolicy::default(),
            support: SupportPolicy::default(),
            prompt: PromptSetup::default(),
            embedding: EmbeddingSetup::default(),
            llm: LlmSetup::default(),
            rerank: RerankSetup::default(),
            audit: AuditSetup::default(),
        }
    }
}

fn check_kind(config: &ProviderConfig, expected: ProviderKind, section: &str) -> Result<()> {
    anyhow::ensure!(config.kind == expected, "{section}: provider kind must be {expected:?}, found {:?}", config.kind);
    config.validate().with_context(|| format!("{section}: invalid provider configuration"))?;
    Ok(())
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: EngineConfig =
            serde_json::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.chunking.validate()?;
        self.bm25.validate()?;
        self.hnsw.validate()?;
        self.fusion.validate()?;
        self.support.validate()?;
        match &self.embedding {
            EmbeddingSetup::Offline(spec) => spec.validate()?,
            EmbeddingSetup::Remote(c) => check_kind(c, ProviderKind::Embedding, "embedding")?,
        }
        if let LlmSetup::Remote(c) = &self.llm {
            check_kind(c, ProviderKind::Llm, "llm")?;
        }
        if let RerankMode::Remote(c) = &self.rerank.provider {
            check_kind(c, ProviderKind::Rerank, "rerank")?;
        }
        Ok(())
    }

    pub fn index_params(&self) -> IndexParams {
        IndexParams { bm25: self.bm25, hnsw: self.hnsw }
    }
}

/// Resolves a path from the configuration against the directory of the
/// configuration file.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let mut config = EngineConfig {
            llm: LlmSetup::Remote(ProviderConfig::new(ProviderKind::Llm, "http://localhost:1/v1/chat", "m")),
            ..Default::default()
        };
        config.rerank.fallback = false;
        config.prompt.template_path = Some(PathBuf::from("t.txt"));
        config.save(&path).unwrap();
        assert_eq!(EngineConfig::load(&path).unwrap(), config);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let config: EngineConfig = serde_json::from_str(r#"{"data_dir": "/tmp/x", "fusion": {"keep": 10}}"#).unwrap();
        assert_eq!(config.fusion.keep, 10);
        assert_eq!(config.fusion.n_candidates, 200);
        assert_eq!(config.embedding, EmbeddingSetup::Offline(OfflineEmbedderSpec::default()));
        assert!(config.rerank.fallback);
        assert!(config.audit.redact);
        let config: EngineConfig = serde_json::from_str(r#"{"rerank": {"fallback": false}}"#).unwrap();
        assert_eq!(config.rerank.provider, RerankMode::Offline);
        assert!(!config.rerank.fallback);
    }

    #[test]
    fn wrong_provider_kind_rejected() {
        let config = EngineConfig {
            llm: LlmSetup::Remote(ProviderConfig::new(ProviderKind::Rerank, "http://x", "m")),
            ..Default::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        assert_eq!(resolve(Path::new("/etc/gw"), Path::new("data")), PathBuf::from("/etc/gw/data"));
        assert_eq!(resolve(Path::new("/etc/gw"), Path::new("/var/data")), PathBuf::from("/var/data"));
    }
}
