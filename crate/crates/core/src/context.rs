//! Token-budgeted context windows of the code preceding a target function.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FunctionRecord, SourceFile};
use crate::lexer::LineIndex;

/// Budgets used by the benchmark tables.
pub const STANDARD_BUDGETS: [usize; 9] = [0, 256, 512, 1024, 2048, 4096, 8192, 16384, 32768];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextError {
    #[error("invalid context budget {0}: must be non-negative")]
    InvalidBudget(i64),
    #[error("target span {start}..{end} lies outside {path} ({lines} lines)")]
    SpanOutOfRange {
        path: String,
        start: usize,
        end: usize,
        lines: usize,
    },
    #[error("unknown token counter {0:?}")]
    UnknownCounter(String),
}

/// Counts tokens. Implementations must return 0 for the empty string and be
/// monotone under concatenation.
pub trait TokenCounter: Send + Sync {
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

/// Default approximate counter: UTF-8 bytes divided by four, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxByteCounter;

impl TokenCounter for ApproxByteCounter {
    fn name(&self) -> &str {
        "approx-bytes"
    }

    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

/// Exact whitespace-separated word count.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn name(&self) -> &str {
        "whitespace"
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

pub fn counter_by_name(name: &str) -> Result<Box<dyn TokenCounter>, ContextError> {
    match name {
        "approx-bytes" => Ok(Box::new(ApproxByteCounter)),
        "whitespace" => Ok(Box::new(WhitespaceCounter)),
        other => Err(ContextError::UnknownCounter(other.to_string())),
    }
}

pub fn count_tokens(text: &str, counter: &dyn TokenCounter) -> usize {
    counter.count(text)
}

/// The `context.*` configuration block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextConfig {
    pub budget_tokens: i64,
    pub counter: String,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            budget_tokens: 0,
            counter: "approx-bytes".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub text: String,
    pub budget: usize,
    pub actual_tokens: usize,
    /// 1-based source line of the window's first line (equals the target's
    /// first line when the window is empty).
    pub first_line: usize,
}

impl ContextWindow {
    pub fn lines(&self) -> Vec<&str> {
        self.text.lines().collect()
    }
}

/// All source text before the target's first line (its comment block).
pub fn preceding_text<'a>(file: &'a SourceFile, target: &FunctionRecord) -> Result<&'a str, ContextError> {
    let idx = LineIndex::new(&file.text);
    let (start, end) = target.span;
    let out_of_range = || ContextError::SpanOutOfRange {
        path: file.path.clone(),
        start,
        end,
        lines: idx.line_count(),
    };
    if start == 0 || start > end || end > idx.line_count() {
        return Err(out_of_range());
    }
    let offset = idx.line_start(start).ok_or_else(out_of_range)?;
    Ok(&file.text[..offset])
}

/// Longest whole-line suffix of the code preceding `target` that fits in
/// `budget` tokens.
pub fn build_context(
    file: &SourceFile,
    target: &FunctionRecord,
    budget: i64,
    counter: &dyn TokenCounter,
) -> Result<ContextWindow, ContextError> {
    if budget < 0 {
        return Err(ContextError::InvalidBudget(budget));
    }
    let budget = budget as usize;
    let prefix = preceding_text(file, target)?;
    let starts: Vec<usize> = std::iter::once(0)
        .chain(prefix.match_indices('\n').map(|(i, _)| i + 1))
        .filter(|&s| s < prefix.len())
        .collect();
    // Suffix token counts are non-increasing in the start line, so binary
    // search for the first start whose suffix fits.
    let fits = |i: usize| i == starts.len() || counter.count(&prefix[starts[i]..]) <= budget;
    let (mut lo, mut hi) = (0, starts.len());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if fits(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let text = match starts.get(lo) {
        Some(&s) => prefix[s..].to_string(),
        None => String::new(),
    };
    let actual_tokens = counter.count(&text);
    Ok(ContextWindow {
        first_line: target.span.0 - (starts.len() - lo),
        text,
        budget,
        actual_tokens,
    })
}
