//! Verification of completed functions and structured error feedback.
//!
//! A backend receives the oracle contract and the same contract with the
//! target body replaced by the model's completion, and returns an
//! [`ExecutionVerdict`]. Shipped backends: [`CompileCheckBackend`] (solc),
//! [`DifferentialBackend`] (solc plus an external fuzz command) and
//! [`MockBackend`] (scripted tables, no external tools).

mod classify;
mod fuzz;
mod mock;
mod process;
mod solc;

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FunctionRecord, VERIFICATION_STATEMENT};
use crate::lexer::{self, is_reserved, LexKind, LineIndex};
use crate::retrieval::Query;

pub use classify::{classify_error, Classifier, ClassifierConfig};
pub use fuzz::{CommandFuzzer, FuzzConfig, FuzzReport};
pub use mock::{MockBackend, MockCase, MockFixture, MockTask, MockVariant};
pub use process::{run_with_timeout, ProcessError, ProcessOutput};
pub use solc::{compile_check, CompileCheckBackend, Compiler, SolcCompiler};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("invalid executor config: {0}")]
    InvalidConfig(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorKind {
    UndeclaredIdentifier,
    Member,
    IdentifierNotUnique,
    IndexedExpression,
    ImplicitlyConvertible,
    Other,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 6] = [
        ErrorKind::UndeclaredIdentifier,
        ErrorKind::Member,
        ErrorKind::IdentifierNotUnique,
        ErrorKind::IndexedExpression,
        ErrorKind::ImplicitlyConvertible,
        ErrorKind::Other,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: ErrorKind,
    pub message: String,
    /// 1-based line within the completed body (line 1 holds `{`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identifier: Option<String>,
}

impl Diagnostic {
    pub fn other(message: impl Into<String>) -> Self {
        Diagnostic {
            kind: ErrorKind::Other,
            message: message.into(),
            line: None,
            identifier: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    CompileError,
    FunctionalMismatch,
    ExecutorUnavailable,
}

impl VerdictStatus {
    /// Compiled without errors (pass or behavioural mismatch).
    pub fn compiles(self) -> bool {
        matches!(self, VerdictStatus::Pass | VerdictStatus::FunctionalMismatch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionVerdict {
    pub status: VerdictStatus,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default)]
    pub elapsed_ms: u64,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_version: Option<String>,
    /// Seed used by a stochastic backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ExecutionVerdict {
    fn with(status: VerdictStatus, diagnostics: Vec<Diagnostic>, backend: &str) -> Self {
        ExecutionVerdict {
            status,
            diagnostics,
            elapsed_ms: 0,
            backend: backend.to_string(),
            tool_version: None,
            seed: None,
        }
    }

    pub fn pass(backend: &str) -> Self {
        Self::with(VerdictStatus::Pass, Vec::new(), backend)
    }

    /// A compile error; an empty list gets a generic diagnostic so the
    /// verdict always explains itself.
    pub fn compile_error(mut diagnostics: Vec<Diagnostic>, backend: &str) -> Self {
        if diagnostics.is_empty() {
            diagnostics.push(Diagnostic::other("compilation failed"));
        }
        Self::with(VerdictStatus::CompileError, diagnostics, backend)
    }

    pub fn mismatch(diagnostics: Vec<Diagnostic>, backend: &str) -> Self {
        Self::with(VerdictStatus::FunctionalMismatch, diagnostics, backend)
    }

    pub fn unavailable(reason: impl Into<String>, backend: &str) -> Self {
        Self::with(VerdictStatus::ExecutorUnavailable, vec![Diagnostic::other(reason)], backend)
    }

    pub fn is_pass(&self) -> bool {
        self.status == VerdictStatus::Pass
    }

    /// Raw diagnostic messages, one per line, as shown to the model.
    pub fn feedback(&self) -> String {
        self.diagnostics
            .iter()
            .map(|d| d.message.trim_end())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Verifies a completed contract against its oracle.
pub trait ExecutorBackend: Send + Sync {
    fn name(&self) -> &str;
    fn verify(&self, oracle_source: &str, completed_source: &str, target: &FunctionRecord) -> ExecutionVerdict;
}

/// Byte offsets of the target's body in `source`: (body start, body end).
/// The body is located through the record's signature on its source line.
/// Only the signature line must exist, so this also works on completed
/// sources whose bodies changed length.
pub fn locate_body(source: &str, target: &FunctionRecord) -> Result<(usize, usize), ExecutorError> {
    let bad = |why: &str| ExecutorError::MalformedRecord(format!("{}: {why}", target.task_id()));
    let idx = LineIndex::new(source);
    let (start, end) = target.span;
    if start == 0 || start > end {
        return Err(bad("span out of range"));
    }
    let line_off = idx
        .line_start(target.signature_line())
        .ok_or_else(|| bad("signature line out of range"))?;
    let rest = &source[line_off..];
    let indent = rest.len() - rest.trim_start_matches([' ', '\t']).len();
    if !rest[indent..].starts_with(target.signature.as_str()) {
        return Err(bad("signature not found at its line"));
    }
    let body_start = line_off + indent + target.signature.len();
    let body_len = block_len(&source[body_start..]).ok_or_else(|| bad("body is not a balanced block"))?;
    Ok((body_start, body_start + body_len))
}

/// Length of the brace block at the start of `text`, braces inside
/// comments and strings ignored.
fn block_len(text: &str) -> Option<usize> {
    if !text.starts_with('{') {
        return None;
    }
    let mut depth = 0usize;
    for lx in lexer::lex(text).ok()? {
        if lx.is_punct("{") {
            depth += 1;
        } else if lx.is_punct("}") {
            depth = depth.checked_sub(1)?;
            if depth == 0 {
                return Some(lx.end);
            }
        }
    }
    None
}

/// `oracle_source` with the target's body replaced by `completed_body`; all
/// other bytes are untouched.
pub fn substitute_function(oracle_source: &str, target: &FunctionRecord, completed_body: &str) -> Result<String, ExecutorError> {
    if target.span.1 > LineIndex::new(oracle_source).line_count() {
        return Err(ExecutorError::MalformedRecord(format!("{}: span out of range", target.task_id())));
    }
    let (start, end) = locate_body(oracle_source, target)?;
    let mut out = String::with_capacity(oracle_source.len() + completed_body.len());
    out.push_str(&oracle_source[..start]);
    out.push_str(completed_body);
    out.push_str(&oracle_source[end..]);
    Ok(out)
}

/// The target's body as it appears in `source`.
pub fn extract_body<'a>(source: &'a str, target: &FunctionRecord) -> Result<&'a str, ExecutorError> {
    let (start, end) = locate_body(source, target)?;
    Ok(&source[start..end])
}

/// Whitespace-insensitive form of a body with any verification statement
/// removed, used to compare completions with oracle bodies.
pub fn normalize_body(body: &str) -> String {
    body.replace(VERIFICATION_STATEMENT, " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1-based body-relative line of byte `offset`, if it falls inside the body.
pub(crate) fn body_line(source: &str, body: (usize, usize), offset: usize) -> Option<usize> {
    if offset < body.0 || offset >= body.1 {
        return None;
    }
    Some(source[body.0..offset].matches('\n').count() + 1)
}

/// Body-relative form of 1-based source line `line`.
pub(crate) fn rebase_line(source: &str, body: (usize, usize), line: usize) -> Option<usize> {
    let idx = LineIndex::new(source);
    let first = idx.line_of(body.0);
    let last = idx.line_of(body.1.saturating_sub(1).max(body.0));
    (first..=last).contains(&line).then(|| line - first + 1)
}

/// Retrieval queries for a failed verdict: diagnostic identifiers first,
/// then the faulty line, then every identifier in the body.
pub fn build_query(verdict: &ExecutionVerdict, completed_body: &str) -> Vec<Query> {
    let mut idents: Vec<&str> = Vec::new();
    for d in &verdict.diagnostics {
        if let Some(id) = d.identifier.as_deref() {
            if !id.trim().is_empty() && !idents.contains(&id) {
                idents.push(id);
            }
        }
    }
    if !idents.is_empty() {
        return idents.into_iter().filter_map(|i| Query::identifier(i).ok()).collect();
    }
    let lines: Vec<&str> = completed_body.lines().collect();
    for d in &verdict.diagnostics {
        if let Some(text) = d.line.and_then(|l| l.checked_sub(1)).and_then(|i| lines.get(i)) {
            if let Ok(q) = Query::line(text.trim()) {
                return vec![q];
            }
        }
    }
    let Ok(lexemes) = lexer::lex(completed_body) else {
        return Vec::new();
    };
    let mut seen: Vec<&str> = Vec::new();
    for lx in lexemes {
        if lx.kind == LexKind::Ident && !is_reserved(lx.text) && !seen.contains(&lx.text) {
            seen.push(lx.text);
        }
    }
    seen.into_iter().filter_map(|i| Query::identifier(i).ok()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Solc,
    Differential,
}

/// The `executor.*` configuration block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutorConfig {
    pub backend: BackendKind,
    pub timeout_secs: u64,
    pub solc_path: String,
    /// Mock fixture path, relative to the config file's directory.
    pub mock_fixture: Option<String>,
    pub fuzz: Option<FuzzConfig>,
    pub classifier: ClassifierConfig,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            backend: BackendKind::Mock,
            timeout_secs: DEFAULT_TIMEOUT.as_secs(),
            solc_path: "solc".into(),
            mock_fixture: None,
            fuzz: None,
            classifier: ClassifierConfig::default(),
        }
    }
}

/// Compile check followed by the fuzz command; compile errors short-circuit.
pub struct DifferentialBackend {
    pub compiler: SolcCompiler,
    pub fuzzer: CommandFuzzer,
}

impl ExecutorBackend for DifferentialBackend {
    fn name(&self) -> &str {
        "differential"
    }

    fn verify(&self, oracle_source: &str, completed_source: &str, target: &FunctionRecord) -> ExecutionVerdict {
        let compiled = CompileCheckBackend::new(self.compiler.clone()).verify(oracle_source, completed_source, target);
        if compiled.status != VerdictStatus::Pass {
            return compiled;
        }
        let mut v = self.fuzzer.verify(oracle_source, completed_source, target);
        v.elapsed_ms += compiled.elapsed_ms;
        v
    }
}

/// Builds the configured backend; relative paths resolve against `base_dir`.
pub fn backend_from_config(cfg: &ExecutorConfig, base_dir: &Path) -> Result<Box<dyn ExecutorBackend>, ExecutorError> {
    let timeout = Duration::from_secs(cfg.timeout_secs.max(1));
    let classifier = Classifier::new(&cfg.classifier)?;
    let solc = || SolcCompiler::new(&cfg.solc_path, timeout, classifier.clone());
    Ok(match cfg.backend {
        BackendKind::Mock => {
            let rel = cfg
                .mock_fixture
                .as_deref()
                .ok_or_else(|| ExecutorError::InvalidConfig("mock backend needs executor.mock_fixture".into()))?;
            Box::new(MockBackend::from_path(&base_dir.join(rel), classifier)?)
        }
        BackendKind::Solc => Box::new(CompileCheckBackend::new(solc())),
        BackendKind::Differential => {
            let fuzz = cfg
                .fuzz
                .clone()
                .ok_or_else(|| ExecutorError::InvalidConfig("differential backend needs executor.fuzz".into()))?;
            Box::new(DifferentialBackend {
                compiler: solc(),
                fuzzer: CommandFuzzer::new(fuzz, timeout),
            })
        }
    })
}
