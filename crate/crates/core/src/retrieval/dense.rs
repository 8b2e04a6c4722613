//! Dense retrieval: cosine similarity over vectors from an external encoder.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{sliding_windows, top_k, Query, RetrievalConfig, RetrievalError, RetrievedSnippet};
use crate::lexer;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("embedding request failed: {0}")]
    Transport(String),
    #[error("malformed embedding response: {0}")]
    Protocol(String),
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("no embedding for text {0:?}")]
    UnknownText(String),
}

/// Source of fixed-dimension embeddings. `embed` must be deterministic for a
/// given instance and return one vector per input text.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
    /// Whether several threads may call `embed` at once.
    fn allows_concurrent_calls(&self) -> bool {
        true
    }
}

/// Cosine similarity; 0 when either vector is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

pub fn dense_retrieve<S: AsRef<str>>(
    query: &Query,
    lines: &[S],
    provider: &dyn EmbeddingProvider,
    cfg: &RetrievalConfig,
) -> Result<Vec<RetrievedSnippet>, RetrievalError> {
    let dim = provider.dimension();
    if dim == 0 {
        return Err(RetrievalError::InvalidConfig("provider dimension must be >= 1".into()));
    }
    let windows = sliding_windows(lines, cfg.window_lines, cfg.step_lines);
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let mut texts = Vec::with_capacity(windows.len() + 1);
    texts.push(query.text.clone());
    texts.extend(windows.iter().map(|w| w.text.clone()));
    let vectors = provider.embed(&texts)?;
    if vectors.len() != texts.len() {
        return Err(ProviderError::Protocol(format!(
            "{} vectors for {} texts",
            vectors.len(),
            texts.len()
        ))
        .into());
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(ProviderError::Dimension {
            expected: dim,
            got: v.len(),
        }
        .into());
    }
    let q = &vectors[0];
    let hits = windows
        .iter()
        .zip(&vectors[1..])
        .map(|(w, v)| {
            let s = cosine(q, v);
            RetrievedSnippet {
                line_index: w.line_index,
                text: w.text.clone(),
                score: if s.is_finite() { s } else { 0.0 },
                matched_fragment: None,
            }
        })
        .collect();
    Ok(top_k(hits, cfg.max_snippets))
}

/// Deterministic local provider: signed feature hashing of lexer terms.
#[derive(Debug, Clone)]
pub struct HashingEmbeddingProvider {
    dimension: usize,
}

impl HashingEmbeddingProvider {
    pub fn new(dimension: usize) -> Self {
        HashingEmbeddingProvider {
            dimension: dimension.max(1),
        }
    }

    fn fnv1a(s: &str) -> u64 {
        s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

impl EmbeddingProvider for HashingEmbeddingProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut v = vec![0.0; self.dimension];
                for term in lexer::terms(t) {
                    let h = Self::fnv1a(term);
                    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                    v[(h % self.dimension as u64) as usize] += sign;
                }
                v
            })
            .collect())
    }
}

/// Looks texts up in a fixed table; unknown texts get `fallback` or fail.
#[derive(Debug, Clone, Default)]
pub struct TableEmbeddingProvider {
    dimension: usize,
    table: HashMap<String, Vec<f64>>,
    fallback: Option<Vec<f64>>,
}

impl TableEmbeddingProvider {
    pub fn new(dimension: usize) -> Self {
        TableEmbeddingProvider {
            dimension,
            ..Self::default()
        }
    }

    pub fn with(mut self, text: impl Into<String>, vector: Vec<f64>) -> Self {
        self.table.insert(text.into(), vector);
        self
    }

    pub fn with_fallback(mut self, vector: Vec<f64>) -> Self {
        self.fallback = Some(vector);
        self
    }
}

impl EmbeddingProvider for TableEmbeddingProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .or(self.fallback.as_ref())
                    .cloned()
                    .ok_or_else(|| ProviderError::UnknownText(t.clone()))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Remote encoder behind `POST {"texts": [...]}` -> `{"vectors": [[...], ...]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbeddingProvider {
    endpoint: String,
    dimension: usize,
    timeout: Duration,
    bearer_token: Option<String>,
}

impl HttpEmbeddingProvider {
    pub fn new(endpoint: impl Into<String>, dimension: usize) -> Self {
        HttpEmbeddingProvider {
            endpoint: endpoint.into(),
            dimension,
            timeout: Duration::from_secs(30),
            bearer_token: None,
        }
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn bearer_token(mut self, token: Option<String>) -> Self {
        self.bearer_token = token;
        self
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let mut req = ureq::post(&self.endpoint).timeout(self.timeout);
        if let Some(tok) = &self.bearer_token {
            req = req.set("Authorization", &format!("Bearer {tok}"));
        }
        let resp = req
            .send_json(EmbedRequest { texts })
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let body: EmbedResponse = resp
            .into_json()
            .map_err(|e| ProviderError::Protocol(e.to_string()))?;
        Ok(body.vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::RetrievalMethod;

    fn cfg(k: usize) -> RetrievalConfig {
        RetrievalConfig {
            max_snippets: k,
            ..RetrievalConfig::with_method(RetrievalMethod::Dense)
        }
    }

    #[test]
    fn identical_and_orthogonal_vectors() {
        assert_eq!(cosine(&[0.6, 0.8], &[0.6, 0.8]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn table_provider_ranking_matches_hand_cosines() {
        // q=(1,0,0); a=(1,1,0) -> 1/sqrt2; b=(0,1,0) -> 0; c=(2,0,1) -> 2/sqrt5
        let p = TableEmbeddingProvider::new(3)
            .with("q", vec![1.0, 0.0, 0.0])
            .with("a", vec![1.0, 1.0, 0.0])
            .with("b", vec![0.0, 1.0, 0.0])
            .with("c", vec![2.0, 0.0, 1.0]);
        let q = Query::line("q").unwrap();
        let hits = dense_retrieve(&q, &["a", "b", "c"], &p, &cfg(3)).unwrap();
        assert_eq!(hits.iter().map(|h| h.line_index).collect::<Vec<_>>(), vec![2, 0, 1]);
        assert!((hits[0].score - 2.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!((hits[1].score - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(hits[2].score, 0.0);
    }

    #[test]
    fn constant_vectors_tie_break_by_index() {
        let p = TableEmbeddingProvider::new(2).with_fallback(vec![1.0, 1.0]);
        let q = Query::line("anything").unwrap();
        let hits = dense_retrieve(&q, &["x", "y", "z"], &p, &cfg(2)).unwrap();
        assert_eq!(hits.iter().map(|h| h.line_index).collect::<Vec<_>>(), vec![0, 1]);
        assert!(hits.iter().all(|h| (h.score - 1.0).abs() < 1e-12));
    }

    #[test]
    fn provider_failures_surface_as_unavailable() {
        let p = TableEmbeddingProvider::new(2);
        let q = Query::line("q").unwrap();
        let err = dense_retrieve(&q, &["x"], &p, &cfg(1)).unwrap_err();
        assert!(matches!(err, RetrievalError::Unavailable(ProviderError::UnknownText(_))));

        let p = TableEmbeddingProvider::new(3).with_fallback(vec![1.0]);
        let err = dense_retrieve(&q, &["x"], &p, &cfg(1)).unwrap_err();
        assert!(matches!(err, RetrievalError::Unavailable(ProviderError::Dimension { expected: 3, got: 1 })));

        // nothing listens on port 9 of the loopback interface
        let p = HttpEmbeddingProvider::new("http://127.0.0.1:9/embed", 4).timeout(Duration::from_millis(500));
        let err = dense_retrieve(&q, &["x"], &p, &cfg(1)).unwrap_err();
        assert!(matches!(err, RetrievalError::Unavailable(ProviderError::Transport(_))));
    }

    #[test]
    fn hashing_provider_is_deterministic() {
        let p = HashingEmbeddingProvider::new(64);
        let t = vec!["owner = msg.sender;".to_string()];
        assert_eq!(p.embed(&t).unwrap(), p.embed(&t).unwrap());
        let q = Query::line("owner = msg.sender;").unwrap();
        let hits = dense_retrieve(&q, &["uint x;", "owner = msg.sender;"], &p, &cfg(1)).unwrap();
        assert_eq!(hits[0].line_index, 1);
        assert!((hits[0].score - 1.0).abs() < 1e-12);
    }
}
