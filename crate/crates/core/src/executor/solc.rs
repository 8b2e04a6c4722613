//! Compile check through `solc --standard-json`.

use std::process::Command;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::process::{run_with_timeout, ProcessError};
use super::{body_line, locate_body, Classifier, Diagnostic, ErrorKind, ExecutionVerdict, ExecutorBackend};
use crate::corpus::FunctionRecord;
use crate::lexer::LineIndex;

/// One message reported by a compiler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompilerMessage {
    pub is_error: bool,
    pub message: String,
    /// Byte range in the compiled source.
    pub range: Option<(usize, usize)>,
}

pub trait Compiler: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> Option<String>;
    fn classifier(&self) -> &Classifier;
    /// All messages, or the reason the compiler could not run.
    fn compile(&self, source: &str) -> Result<Vec<CompilerMessage>, String>;
}

#[derive(Debug, Clone)]
pub struct SolcCompiler {
    path: String,
    timeout: Duration,
    classifier: Classifier,
    version: Arc<OnceLock<Option<String>>>,
}

impl SolcCompiler {
    pub fn new(path: impl Into<String>, timeout: Duration, classifier: Classifier) -> Self {
        SolcCompiler {
            path: path.into(),
            timeout,
            classifier,
            version: Arc::default(),
        }
    }

    /// True if `path` runs and answers `--version`.
    pub fn available(&self) -> bool {
        self.version().is_some()
    }
}

#[derive(Deserialize)]
struct StdOutput {
    #[serde(default)]
    errors: Vec<StdError>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct StdError {
    severity: String,
    #[serde(default)]
    message: String,
    #[serde(default)]
    formatted_message: Option<String>,
    #[serde(default)]
    source_location: Option<StdLocation>,
}

#[derive(Deserialize)]
struct StdLocation {
    start: i64,
    end: i64,
}

impl Compiler for SolcCompiler {
    fn name(&self) -> &str {
        "solc"
    }

    fn version(&self) -> Option<String> {
        self.version
            .get_or_init(|| {
                let mut cmd = Command::new(&self.path);
                cmd.arg("--version");
                let out = run_with_timeout(cmd, None, self.timeout).ok()?;
                let text = String::from_utf8_lossy(&out.stdout);
                text.lines()
                    .find_map(|l| l.strip_prefix("Version:"))
                    .map(|v| v.trim().to_string())
                    .or_else(|| (out.code == Some(0)).then(|| text.trim().to_string()))
            })
            .clone()
    }

    fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    fn compile(&self, source: &str) -> Result<Vec<CompilerMessage>, String> {
        let input = json!({
            "language": "Solidity",
            "sources": { "Completed.sol": { "content": source } },
            "settings": { "outputSelection": { "*": { "*": ["abi"] } } }
        });
        let mut cmd = Command::new(&self.path);
        cmd.arg("--standard-json");
        let out = run_with_timeout(cmd, Some(input.to_string().as_bytes()), self.timeout).map_err(|e| match e {
            ProcessError::NotFound(p) => format!("solc not found at {p:?}"),
            other => format!("solc failed: {other}"),
        })?;
        let parsed: StdOutput = serde_json::from_slice(&out.stdout).map_err(|e| {
            format!(
                "unreadable solc output ({e}); stderr: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            )
        })?;
        Ok(parsed
            .errors
            .into_iter()
            .map(|e| CompilerMessage {
                is_error: e.severity == "error",
                message: e.formatted_message.unwrap_or(e.message),
                range: e
                    .source_location
                    .filter(|l| l.start >= 0 && l.end >= l.start)
                    .map(|l| (l.start as usize, l.end as usize)),
            })
            .collect())
    }
}

/// Identifier named by the source range of an identifier-bearing error.
fn identifier_at(source: &str, kind: ErrorKind, range: (usize, usize)) -> Option<String> {
    let text = source.get(range.0..range.1)?.trim();
    let ident = match kind {
        ErrorKind::UndeclaredIdentifier | ErrorKind::IdentifierNotUnique => text,
        ErrorKind::Member => text.rsplit('.').next()?,
        _ => return None,
    };
    let ok = !ident.is_empty() && ident.chars().all(crate::lexer::is_ident_char);
    ok.then(|| ident.to_string())
}

/// Errors fail, warnings never do. With `body`, lines are rebased onto the
/// completed body; otherwise they are source lines.
fn check(source: &str, compiler: &dyn Compiler, body: Option<(usize, usize)>) -> ExecutionVerdict {
    let started = Instant::now();
    let mut verdict = if source.trim().is_empty() {
        ExecutionVerdict::compile_error(vec![Diagnostic::other("source is empty")], compiler.name())
    } else {
        match compiler.compile(source) {
            Err(reason) => ExecutionVerdict::unavailable(reason, compiler.name()),
            Ok(messages) => {
                let idx = LineIndex::new(source);
                let diags: Vec<Diagnostic> = messages
                    .iter()
                    .filter(|m| m.is_error)
                    .map(|m| {
                        let mut d = compiler.classifier().classify(&m.message);
                        if let Some(range) = m.range {
                            if d.identifier.is_none() {
                                d.identifier = identifier_at(source, d.kind, range);
                            }
                            d.line = match body {
                                Some(b) => body_line(source, b, range.0),
                                None => Some(idx.line_of(range.0)),
                            };
                        } else if body.is_some() {
                            d.line = None;
                        }
                        d
                    })
                    .collect();
                if diags.is_empty() {
                    ExecutionVerdict::pass(compiler.name())
                } else {
                    ExecutionVerdict::compile_error(diags, compiler.name())
                }
            }
        }
    };
    verdict.tool_version = compiler.version();
    verdict.elapsed_ms = started.elapsed().as_millis() as u64;
    verdict
}

pub fn compile_check(source: &str, compiler: &dyn Compiler) -> ExecutionVerdict {
    check(source, compiler, None)
}

/// Pass means "compiles"; no behavioural check.
pub struct CompileCheckBackend<C: Compiler = SolcCompiler> {
    compiler: C,
}

impl<C: Compiler> CompileCheckBackend<C> {
    pub fn new(compiler: C) -> Self {
        CompileCheckBackend { compiler }
    }
}

impl<C: Compiler> ExecutorBackend for CompileCheckBackend<C> {
    fn name(&self) -> &str {
        self.compiler.name()
    }

    fn verify(&self, _oracle_source: &str, completed_source: &str, target: &FunctionRecord) -> ExecutionVerdict {
        let body = locate_body(completed_source, target).ok();
        let mut v = check(completed_source, &self.compiler, body);
        if v.status == super::VerdictStatus::CompileError && body.is_none() {
            for d in &mut v.diagnostics {
                d.line = None;
            }
        }
        v
    }
}
