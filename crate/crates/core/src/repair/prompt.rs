//! Prompt templates and parsing of model output.

use thiserror::Error;

use super::{CompletionTask, RepairStrategy};
use crate::retrieval::RetrievedSnippet;

pub const TEMPLATE_VERSION: &str = "v1";

const TASK: &str = include_str!("../../templates/task.v1.txt");
const COMPLETION: &str = include_str!("../../templates/completion.v1.txt");
const SELF_EDIT: &str = include_str!("../../templates/self_edit.v1.txt");
const SELF_DEBUG_EXPLAIN: &str = include_str!("../../templates/self_debug_explain.v1.txt");
const SELF_DEBUG: &str = include_str!("../../templates/self_debug.v1.txt");
const SELF_REFINE: &str = include_str!("../../templates/self_refine.v1.txt");
const SELF_REPAIR: &str = include_str!("../../templates/self_repair.v1.txt");
const SNIPPETS: &str = include_str!("../../templates/snippets.v1.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template refers to unknown variable {{{{{0}}}}}")]
    UnknownVariable(String),
    #[error("unterminated placeholder at byte {0}")]
    Unterminated(usize),
}

/// Replaces each `{{name}}` with its value in one pass; inserted values are
/// never rescanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    let mut consumed = 0;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or(TemplateError::Unterminated(consumed + open))?;
        let name = after[..close].trim();
        let value = vars
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| TemplateError::UnknownVariable(name.to_string()))?;
        out.push_str(value);
        let step = open + 2 + close + 2;
        consumed += step;
        rest = &rest[step..];
    }
    out.push_str(rest);
    Ok(out)
}

fn task_section(task: &CompletionTask) -> Result<String, TemplateError> {
    render(
        TASK,
        &[
            ("context", task.context.trim_end_matches('\n')),
            ("comment", &task.record.comment),
            ("signature", task.record.signature.trim_end()),
        ],
    )
}

pub fn completion_prompt(task: &CompletionTask) -> Result<String, TemplateError> {
    let t = task_section(task)?;
    render(COMPLETION, &[("task", t.trim_end())])
}

/// Retrieved snippets with source line numbers; empty when there are none.
pub fn snippet_section(snippets: &[RetrievedSnippet], first_source_line: usize) -> Result<String, TemplateError> {
    if snippets.is_empty() {
        return Ok(String::new());
    }
    let items = snippets
        .iter()
        .map(|s| format!("line {}: {}", first_source_line + s.line_index, s.text.trim_end()))
        .collect::<Vec<_>>()
        .join("\n");
    render(SNIPPETS, &[("items", &items)])
}

/// What a repair prompt is built from.
pub struct RepairInput<'a> {
    pub task: &'a CompletionTask,
    /// Previous completion: signature plus extracted body, or the raw text
    /// when no body could be extracted.
    pub completed: &'a str,
    pub feedback: &'a str,
    pub snippets: &'a str,
    pub explanation: Option<&'a str>,
}

pub fn explanation_prompt(input: &RepairInput<'_>) -> Result<String, TemplateError> {
    let t = task_section(input.task)?;
    render(
        SELF_DEBUG_EXPLAIN,
        &[("task", t.trim_end()), ("completed", input.completed), ("feedback", input.feedback)],
    )
}

pub fn repair_prompt(strategy: RepairStrategy, input: &RepairInput<'_>) -> Result<String, TemplateError> {
    let t = task_section(input.task)?;
    let task = t.trim_end();
    let base = [
        ("task", task),
        ("completed", input.completed),
        ("snippets", input.snippets),
    ];
    match strategy {
        RepairStrategy::SelfRefine => render(SELF_REFINE, &base),
        RepairStrategy::SelfEdit => render(SELF_EDIT, &[base[0], base[1], base[2], ("feedback", input.feedback)]),
        RepairStrategy::SelfRepair => render(SELF_REPAIR, &[base[0], base[1], base[2], ("feedback", input.feedback)]),
        RepairStrategy::SelfDebug => render(
            SELF_DEBUG,
            &[
                base[0],
                base[1],
                base[2],
                ("feedback", input.feedback),
                ("explanation", input.explanation.unwrap_or("").trim_end()),
            ],
        ),
    }
}

/// Contents of the first fenced code block, or the whole text if unfenced.
fn strip_fences(text: &str) -> &str {
    let Some(open) = text.find("```") else {
        return text;
    };
    let after = &text[open + 3..];
    // skip the info string (e.g. "solidity")
    let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
    let inner = &after[body_start..];
    match inner.find("```") {
        Some(close) => &inner[..close],
        None => inner,
    }
}

/// The first balanced `{...}` block in model output, after fence stripping.
/// Braces in comments and string literals inside the block are ignored.
pub fn extract_completion_body(text: &str) -> Option<String> {
    let code = strip_fences(text);
    let start = code.find('{')?;
    let bytes = code.as_bytes();
    let mut depth = 0usize;
    let mut i = start;
    while i < bytes.len() {
        match bytes[i] {
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(code[start..=i].to_string());
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                i = code[i..].find('\n').map_or(bytes.len(), |n| i + n);
                continue;
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i = code[i + 2..].find("*/").map_or(bytes.len(), |n| i + 2 + n + 2);
                continue;
            }
            q @ (b'"' | b'\'') => {
                i += 1;
                while i < bytes.len() && bytes[i] != q && bytes[i] != b'\n' {
                    i += if bytes[i] == b'\\' { 2 } else { 1 };
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

pub fn all_templates() -> [(&'static str, &'static str); 8] {
    [
        ("task", TASK),
        ("completion", COMPLETION),
        ("self_edit", SELF_EDIT),
        ("self_debug_explain", SELF_DEBUG_EXPLAIN),
        ("self_debug", SELF_DEBUG),
        ("self_refine", SELF_REFINE),
        ("self_repair", SELF_REPAIR),
        ("snippets", SNIPPETS),
    ]
}
