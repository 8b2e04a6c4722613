//! Scripted stand-in for compile + differential fuzzing.
//!
//! Each task lists probe inputs with the oracle's outputs, plus known
//! completion variants with either compiler messages or the outputs they
//! produce. A completion equal to the oracle body (layout and verification
//! statement ignored) passes; a completion matching no variant is treated as
//! behaviourally different.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{extract_body, normalize_body, Classifier, Diagnostic, ExecutionVerdict, ExecutorBackend, ExecutorError};
use crate::corpus::FunctionRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockCase {
    pub input: String,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockVariant {
    pub body: String,
    /// Compiler messages; lines in them are body-relative.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compile_errors: Vec<String>,
    /// Outputs on the task's inputs, in order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockTask {
    #[serde(default)]
    pub cases: Vec<MockCase>,
    #[serde(default)]
    pub variants: Vec<MockVariant>,
}

/// Keyed by task id (`path:line:name`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default)]
    pub tasks: BTreeMap<String, MockTask>,
}

fn balanced(source: &str) -> bool {
    let Ok(lexemes) = crate::lexer::lex(source) else {
        return false;
    };
    let mut depth = 0i64;
    for lx in lexemes {
        if lx.is_punct("{") {
            depth += 1;
        } else if lx.is_punct("}") {
            depth -= 1;
            if depth < 0 {
                return false;
            }
        }
    }
    depth == 0
}

pub struct MockBackend {
    fixture: MockFixture,
    classifier: Classifier,
}

impl MockBackend {
    pub fn new(fixture: MockFixture, classifier: Classifier) -> Self {
        MockBackend { fixture, classifier }
    }

    pub fn from_path(path: &Path, classifier: Classifier) -> Result<Self, ExecutorError> {
        let io = |source| ExecutorError::Io {
            path: path.display().to_string(),
            source,
        };
        let text = std::fs::read_to_string(path).map_err(io)?;
        let fixture = serde_json::from_str(&text)
            .map_err(|e| ExecutorError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Ok(Self::new(fixture, classifier))
    }

    fn judge(&self, task: &MockTask, body: &str, oracle_body: &str) -> ExecutionVerdict {
        let norm = normalize_body(body);
        if norm == normalize_body(oracle_body) {
            return ExecutionVerdict::pass(self.name());
        }
        let Some(variant) = task.variants.iter().find(|v| normalize_body(&v.body) == norm) else {
            return ExecutionVerdict::mismatch(
                vec![Diagnostic::other(
                    "differential check failed: completed function is not equivalent to the oracle",
                )],
                self.name(),
            );
        };
        if !variant.compile_errors.is_empty() {
            let diags = variant.compile_errors.iter().map(|m| self.classifier.classify(m)).collect();
            return ExecutionVerdict::compile_error(diags, self.name());
        }
        let outputs = variant.outputs.as_deref().unwrap_or_default();
        let diffs: Vec<Diagnostic> = task
            .cases
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let got = outputs.get(i).map_or("<no output>", String::as_str);
                (got != c.expected).then(|| {
                    Diagnostic::other(format!(
                        "differential check failed on input {}: expected {}, got {}",
                        c.input, c.expected, got
                    ))
                })
            })
            .collect();
        if diffs.is_empty() {
            ExecutionVerdict::pass(self.name())
        } else {
            ExecutionVerdict::mismatch(diffs, self.name())
        }
    }
}

impl ExecutorBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn verify(&self, oracle_source: &str, completed_source: &str, target: &FunctionRecord) -> ExecutionVerdict {
        let id = target.task_id();
        let Some(task) = self.fixture.tasks.get(&id) else {
            return ExecutionVerdict::unavailable(format!("mock fixture has no entry for {id}"), self.name());
        };
        let oracle_body = match extract_body(oracle_source, target) {
            Ok(b) => b,
            Err(e) => return ExecutionVerdict::unavailable(format!("oracle unusable: {e}"), self.name()),
        };
        match extract_body(completed_source, target) {
            Ok(body) if balanced(completed_source) => self.judge(task, body, oracle_body),
            _ => ExecutionVerdict::compile_error(
                vec![Diagnostic::other("ParserError: completed function body is not a balanced block")],
                self.name(),
            ),
        }
    }
}
