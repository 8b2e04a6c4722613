//! Retrieval of context lines relevant to an executor error.
//!
//! Sparse methods ([`lcs_retrieve`], [`bm25_retrieve`], [`tfidf_retrieve`],
//! [`jaccard_retrieve`]) need no model; [`dense_retrieve`] ranks by cosine
//! similarity of vectors from an [`EmbeddingProvider`]. Every method returns
//! at most `max_snippets` results ordered by score descending, then line
//! index ascending.

mod dense;
mod lcs;
mod sparse;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::{self, is_reserved};

pub use dense::{
    cosine, dense_retrieve, EmbeddingProvider, HashingEmbeddingProvider, HttpEmbeddingProvider,
    ProviderError, TableEmbeddingProvider,
};
pub use lcs::{is_subword_boundary, lcs_retrieve, MIN_LCS_MATCH};
pub use sparse::{bm25_retrieve, bm25_scores, jaccard_retrieve, tfidf_retrieve, tfidf_scores};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("query text is empty")]
    EmptyQuery,
    #[error("retrieval unavailable: {0}")]
    Unavailable(#[from] ProviderError),
    #[error("dense retrieval requires an embedding provider")]
    MissingProvider,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMethod {
    Lcs,
    Bm25,
    Tfidf,
    Jaccard,
    Dense,
}

impl std::str::FromStr for RetrievalMethod {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lcs" => Ok(RetrievalMethod::Lcs),
            "bm25" => Ok(RetrievalMethod::Bm25),
            "tfidf" | "tf-idf" => Ok(RetrievalMethod::Tfidf),
            "jaccard" => Ok(RetrievalMethod::Jaccard),
            "dense" => Ok(RetrievalMethod::Dense),
            other => Err(RetrievalError::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

impl RetrievalMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalMethod::Lcs => "lcs",
            RetrievalMethod::Bm25 => "bm25",
            RetrievalMethod::Tfidf => "tfidf",
            RetrievalMethod::Jaccard => "jaccard",
            RetrievalMethod::Dense => "dense",
        }
    }
}

/// Which code the retriever searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalScope {
    /// All code preceding the target function.
    #[default]
    Preceding,
    /// Only the token-budgeted context window shown to the model.
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub method: RetrievalMethod,
    pub window_lines: usize,
    pub step_lines: usize,
    pub max_snippets: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub scope: RetrievalScope,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            method: RetrievalMethod::Lcs,
            window_lines: 1,
            step_lines: 1,
            max_snippets: 2,
            bm25_k1: 1.2,
            bm25_b: 0.75,
            scope: RetrievalScope::Preceding,
        }
    }
}

impl RetrievalConfig {
    pub fn with_method(method: RetrievalMethod) -> Self {
        RetrievalConfig {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        let bad = |m: &str| Err(RetrievalError::InvalidConfig(m.to_string()));
        if self.window_lines == 0 {
            return bad("window_lines must be >= 1");
        }
        if self.step_lines == 0 {
            return bad("step_lines must be >= 1");
        }
        if self.max_snippets == 0 {
            return bad("max_snippets must be >= 1");
        }
        if !(self.bm25_k1.is_finite() && self.bm25_k1 >= 0.0) {
            return bad("bm25_k1 must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.bm25_b) {
            return bad("bm25_b must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Identifier,
    Line,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub kind: QueryKind,
    pub text: String,
}

impl Query {
    pub fn new(kind: QueryKind, text: impl Into<String>) -> Result<Self, RetrievalError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        Ok(Query { kind, text })
    }

    pub fn identifier(text: impl Into<String>) -> Result<Self, RetrievalError> {
        Self::new(QueryKind::Identifier, text)
    }

    pub fn line(text: impl Into<String>) -> Result<Self, RetrievalError> {
        Self::new(QueryKind::Line, text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSnippet {
    /// 0-based index of the window's first line in the searched lines.
    pub line_index: usize,
    pub text: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_fragment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub line_index: usize,
    pub text: String,
}

/// Windows of `window_lines` lines starting every `step_lines` lines.
pub fn sliding_windows<S: AsRef<str>>(lines: &[S], window_lines: usize, step_lines: usize) -> Vec<Window> {
    let window_lines = window_lines.max(1);
    (0..lines.len())
        .step_by(step_lines.max(1))
        .map(|start| {
            let end = (start + window_lines).min(lines.len());
            Window {
                line_index: start,
                text: lines[start..end]
                    .iter()
                    .map(AsRef::as_ref)
                    .collect::<Vec<_>>()
                    .join("\n"),
            }
        })
        .collect()
}

pub(crate) fn rank_order(a: &RetrievedSnippet, b: &RetrievedSnippet) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.line_index.cmp(&b.line_index))
}

pub(crate) fn top_k(mut hits: Vec<RetrievedSnippet>, k: usize) -> Vec<RetrievedSnippet> {
    hits.sort_by(rank_order);
    hits.truncate(k);
    hits
}

/// Identifier texts for LCS: identifier queries as-is, identifiers lexed
/// out of line queries.
fn lcs_terms(queries: &[Query]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for q in queries {
        match q.kind {
            QueryKind::Identifier => {
                if !out.contains(&q.text) {
                    out.push(q.text.clone());
                }
            }
            QueryKind::Line => {
                for t in lexer::terms(&q.text) {
                    let is_ident = t.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_' || c == '$');
                    if is_ident && !is_reserved(t) && !out.iter().any(|o| o == t) {
                        out.push(t.to_string());
                    }
                }
            }
        }
    }
    out
}

/// Runs the configured method for a set of queries built from one verdict.
/// LCS runs once per identifier and merges by best score per line; the other
/// methods use the first line query, or all identifiers joined.
pub fn retrieve<S: AsRef<str>>(
    queries: &[Query],
    lines: &[S],
    cfg: &RetrievalConfig,
    provider: Option<&dyn EmbeddingProvider>,
) -> Result<Vec<RetrievedSnippet>, RetrievalError> {
    cfg.validate()?;
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    if cfg.method == RetrievalMethod::Lcs {
        let mut best: BTreeMap<usize, RetrievedSnippet> = BTreeMap::new();
        for term in lcs_terms(queries) {
            let q = Query::identifier(term)?;
            for hit in lcs_retrieve(&q, lines, cfg) {
                match best.get(&hit.line_index) {
                    Some(prev) if prev.score >= hit.score => {}
                    _ => {
                        best.insert(hit.line_index, hit);
                    }
                }
            }
        }
        return Ok(top_k(best.into_values().collect(), cfg.max_snippets));
    }
    let query = match queries.iter().find(|q| q.kind == QueryKind::Line) {
        Some(q) => q.clone(),
        None => Query::line(
            queries
                .iter()
                .map(|q| q.text.as_str())
                .collect::<Vec<_>>()
                .join(" "),
        )?,
    };
    Ok(match cfg.method {
        RetrievalMethod::Bm25 => bm25_retrieve(&query, lines, cfg),
        RetrievalMethod::Tfidf => tfidf_retrieve(&query, lines, cfg),
        RetrievalMethod::Jaccard => jaccard_retrieve(&query, lines, cfg),
        RetrievalMethod::Dense => {
            dense_retrieve(&query, lines, provider.ok_or(RetrievalError::MissingProvider)?, cfg)?
        }
        RetrievalMethod::Lcs => unreachable!(),
    })
}
