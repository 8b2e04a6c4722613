//! Benchmark construction: comment-anchored function extraction, the
//! verification statement, state-dependence filtering, exact deduplication
//! and overlap analysis.

mod dedup;
mod extract;
mod filter;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::{self, LexKind, LineIndex};

pub use dedup::{dedup_exact, jaccard, jaccard_overlap, overlap_fraction, JACCARD_OVERLAP_THRESHOLD};
pub use extract::{declarations, extract_functions, FunctionDecl};
pub use filter::{
    filter_state_dependent, ExclusionReason, FilterConfig, FilterDecision, StateFilter,
};

/// The sentinel statement placed at the top of an oracle body so the
/// differential tester sees a modified function.
pub const VERIFICATION_STATEMENT: &str = "uint256 this_is_a_test_variable;";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("{path}: source text is empty")]
    EmptySource { path: String },
    #[error("{path}:{line}:{column}: malformed source: {reason}")]
    MalformedSource {
        path: String,
        line: usize,
        column: usize,
        reason: String,
    },
    #[error("malformed record: {0}")]
    MalformedRecord(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub text: String,
    pub contract_names: Vec<String>,
}

impl SourceFile {
    pub fn new(path: impl Into<String>, text: impl Into<String>) -> Result<Self, CorpusError> {
        let path = path.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(CorpusError::EmptySource { path });
        }
        let lexemes = lexer::lex(&text).map_err(|e| {
            let idx = LineIndex::new(&text);
            CorpusError::MalformedSource {
                path: path.clone(),
                line: idx.line_of(e.offset()),
                column: idx.column_of(e.offset()),
                reason: e.to_string(),
            }
        })?;
        let contract_names = top_level_names(&lexemes);
        Ok(SourceFile {
            path,
            text,
            contract_names,
        })
    }
}

fn top_level_names(lexemes: &[lexer::Lexeme<'_>]) -> Vec<String> {
    let code: Vec<_> = lexemes.iter().filter(|l| !l.is_comment()).collect();
    let mut depth = 0i64;
    let mut names = Vec::new();
    for (i, lx) in code.iter().enumerate() {
        if lx.is_punct("{") {
            depth += 1;
        } else if lx.is_punct("}") {
            depth -= 1;
        } else if depth == 0
            && lx.kind == LexKind::Ident
            && matches!(lx.text, "contract" | "interface" | "library")
        {
            if let Some(name) = code.get(i + 1).filter(|n| n.kind == LexKind::Ident) {
                names.push(name.text.to_string());
            }
        }
    }
    names
}

/// One comment-anchored function extracted from a source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub source_id: String,
    pub name: String,
    pub contract: Option<String>,
    pub comment: String,
    /// From the `function` keyword up to the opening brace, trailing
    /// whitespace included.
    pub signature: String,
    /// The braced block, braces included.
    pub body: String,
    /// 1-based inclusive line range, comment start through closing brace.
    pub span: (usize, usize),
}

impl FunctionRecord {
    /// Comment, signature and body as they would appear in source.
    pub fn render(&self) -> String {
        format!("{}\n{}{}", self.comment, self.signature, self.body)
    }

    /// The function without its comment.
    pub fn function_text(&self) -> String {
        format!("{}{}", self.signature, self.body)
    }

    pub fn task_id(&self) -> String {
        format!("{}:{}:{}", self.source_id, self.span.0, self.name)
    }

    /// Line (1-based, in the source) holding the signature's `function` keyword.
    pub fn signature_line(&self) -> usize {
        self.span.0 + self.comment.matches('\n').count() + 1
    }

    /// Line (1-based, in the source) holding the body's opening brace.
    pub fn body_start_line(&self) -> usize {
        self.signature_line() + self.signature.matches('\n').count()
    }
}

/// Returns a copy of `record` with the verification statement inserted right
/// after the body's opening brace. Applying it twice inserts twice.
pub fn inject_verification_statement(record: &FunctionRecord) -> Result<FunctionRecord, CorpusError> {
    let open = record
        .body
        .find('{')
        .ok_or_else(|| CorpusError::MalformedRecord(format!("{}: body has no opening brace", record.name)))?;
    if !record.body[open..].contains('}') {
        return Err(CorpusError::MalformedRecord(format!(
            "{}: body has no closing brace",
            record.name
        )));
    }
    let (head, tail) = record.body.split_at(open + 1);
    let mut body = String::with_capacity(record.body.len() + VERIFICATION_STATEMENT.len() + 2);
    body.push_str(head);
    body.push(' ');
    body.push_str(VERIFICATION_STATEMENT);
    if !tail.starts_with(char::is_whitespace) {
        body.push(' ');
    }
    body.push_str(tail);
    Ok(FunctionRecord {
        body,
        ..record.clone()
    })
}

/// Counts for one corpus build. Every extracted declaration lands in exactly
/// one bucket.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total_extracted: usize,
    pub excluded_no_comment: usize,
    pub excluded_state_dependent: usize,
    pub excluded_mint: usize,
    pub retained: usize,
    pub dedup_removed: usize,
    pub duplication_rate: f64,
}

impl FilterReport {
    pub fn exclusions(&self) -> usize {
        self.excluded_no_comment + self.excluded_state_dependent + self.excluded_mint
    }

    pub fn recompute_rate(&mut self) {
        let denom = self.total_extracted.saturating_sub(self.exclusions()).max(1);
        self.duplication_rate = self.dedup_removed as f64 / denom as f64;
    }

    pub fn is_consistent(&self) -> bool {
        self.retained + self.exclusions() + self.dedup_removed == self.total_extracted
    }
}

/// Result of running the whole construction pipeline over a set of files.
#[derive(Debug, Clone)]
pub struct CorpusBuild {
    pub records: Vec<FunctionRecord>,
    pub report: FilterReport,
    /// Files that failed to parse, with the error.
    pub malformed: Vec<CorpusError>,
}

/// Extraction, comment check, state-dependence filter, then exact dedup.
/// Files are processed in the given order; malformed files are skipped and
/// listed.
pub fn build_corpus(files: &[SourceFile], cfg: &FilterConfig) -> CorpusBuild {
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    let mut malformed = Vec::new();
    for file in files {
        let decls = match declarations(file) {
            Ok(d) => d,
            Err(e) => {
                malformed.push(e);
                continue;
            }
        };
        let filter = StateFilter::with_declarations(file, decls.clone(), cfg);
        for decl in &decls {
            report.total_extracted += 1;
            let Some(record) = decl.to_record(&file.path) else {
                report.excluded_no_comment += 1;
                continue;
            };
            match filter.decide(&record) {
                FilterDecision::Keep => kept.push(record),
                FilterDecision::Exclude { reason, .. } => match reason {
                    ExclusionReason::Mint => report.excluded_mint += 1,
                    _ => report.excluded_state_dependent += 1,
                },
            }
        }
    }
    let (records, dedup_report) = dedup_exact(&kept);
    report.dedup_removed = dedup_report.dedup_removed;
    report.retained = records.len();
    report.recompute_rate();
    CorpusBuild {
        records,
        report,
        malformed,
    }
}
