use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::context::{counter_by_name, ContextConfig};
use crate::executor::{BackendKind, ExecutorConfig};
use crate::metrics::CostModel;
use crate::repair::{ChatConfig, RarConfig};
use crate::retrieval::{EmbeddingProvider, HashingEmbeddingProvider, HttpEmbeddingProvider, RetrievalMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Offline feature hashing; a stand-in when no model server is around.
    Hashing,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    pub dimension: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_embed_timeout")]
    pub timeout_secs: u64,
}

fn default_embed_timeout() -> u64 {
    60
}

impl EmbeddingConfig {
    pub fn provider(&self) -> Result<Box<dyn EmbeddingProvider>, HarnessError> {
        if self.dimension == 0 {
            return Err(HarnessError::Config("embedding.dimension must be >= 1".into()));
        }
        Ok(match self.kind {
            EmbeddingKind::Hashing => Box::new(HashingEmbeddingProvider::new(self.dimension)),
            EmbeddingKind::Http => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| HarnessError::Config("embedding.endpoint is required for kind = http".into()))?;
                let token = self.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
                Box::new(
                    HttpEmbeddingProvider::new(endpoint, self.dimension)
                        .timeout(Duration::from_secs(self.timeout_secs.max(1)))
                        .bearer_token(token),
                )
            }
        })
    }
}

/// Everything a run needs. Relative paths are resolved by [`RunConfig::load`]
/// against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Row label in reports; derived from the model and repair settings when
    /// absent.
    pub label: Option<String>,
    pub task_file: PathBuf,
    pub out_dir: PathBuf,
    pub context: ContextConfig,
    pub model: ChatConfig,
    /// Scripted client fixture; replaces the HTTP client when set.
    pub mock_client: Option<PathBuf>,
    pub executor: ExecutorConfig,
    pub repair: RarConfig,
    pub embedding: Option<EmbeddingConfig>,
    /// Samples per task (n).
    pub samples: usize,
    pub k_values: Vec<u64>,
    pub workers: usize,
    pub seed: u64,
    pub cost: CostModel,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            label: None,
            task_file: PathBuf::from("tasks.jsonl"),
            out_dir: PathBuf::from("run"),
            context: ContextConfig::default(),
            model: ChatConfig::default(),
            mock_client: None,
            executor: ExecutorConfig::default(),
            repair: RarConfig::default(),
            embedding: None,
            samples: 1,
            k_values: vec![1],
            workers: 1,
            seed: 0,
            cost: CostModel::default(),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        self.task_file = resolve(base, &self.task_file);
        self.out_dir = resolve(base, &self.out_dir);
        self.mock_client = self.mock_client.as_ref().map(|p| resolve(base, p));
        if let Some(m) = &self.executor.mock_fixture {
            self.executor.mock_fixture = Some(resolve(base, Path::new(m)).display().to_string());
        }
    }

    pub fn display_label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let method = self
            .repair
            .retrieval
            .as_ref()
            .map_or("none", |r| r.method.as_str());
        let model = if self.mock_client.is_some() { "scripted" } else { &self.model.model };
        format!("{model} {method}+{} r{}", self.repair.strategy.as_str(), self.repair.max_rounds)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.samples == 0 {
            return bad("samples must be >= 1".into());
        }
        for &k in &self.k_values {
            if k == 0 || k > self.samples as u64 {
                return bad(format!("k = {k} must lie in 1..={}", self.samples));
            }
        }
        if self.context.budget_tokens < 0 {
            return bad("context.budget_tokens must be >= 0".into());
        }
        counter_by_name(&self.context.counter).map_err(|e| HarnessError::Config(e.to_string()))?;
        if !self.task_file.is_file() {
            return bad(format!("task file {} does not exist", self.task_file.display()));
        }
        if let Some(p) = &self.mock_client {
            if !p.is_file() {
                return bad(format!("mock client fixture {} does not exist", p.display()));
            }
        }
        if self.executor.backend == BackendKind::Mock {
            match &self.executor.mock_fixture {
                Some(p) if Path::new(p).is_file() => {}
                Some(p) => return bad(format!("mock executor fixture {p} does not exist")),
                None => return bad("executor.backend = mock needs executor.mock_fixture".into()),
            }
        }
        if let Some(r) = &self.repair.retrieval {
            r.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            if r.method == RetrievalMethod::Dense && self.embedding.is_none() {
                return bad("dense retrieval needs an embedding block".into());
            }
        }
        self.cost.validate()?;
        Ok(())
    }
}
