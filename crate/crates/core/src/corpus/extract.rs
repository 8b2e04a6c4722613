use super::{CorpusError, FunctionRecord, SourceFile};
use crate::lexer::{self, LexKind, Lexeme, LineIndex};

/// Any function declaration with a body, commented or not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDecl {
    pub name: String,
    pub contract: Option<String>,
    /// Associated comment block text and its first line.
    pub comment: Option<(String, usize)>,
    pub signature: String,
    pub body: String,
    /// Byte offset of the `function` keyword.
    pub signature_start: usize,
    /// Byte range of the braced body.
    pub body_range: (usize, usize),
    pub signature_line: usize,
    pub end_line: usize,
}

impl FunctionDecl {
    pub fn to_record(&self, source_id: &str) -> Option<FunctionRecord> {
        let (comment, start_line) = self.comment.clone()?;
        Some(FunctionRecord {
            source_id: source_id.to_string(),
            name: self.name.clone(),
            contract: self.contract.clone(),
            comment,
            signature: self.signature.clone(),
            body: self.body.clone(),
            span: (start_line, self.end_line),
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConstructorDecl {
    pub contract: Option<String>,
    pub header: String,
    pub body: String,
}

#[derive(Debug, Clone)]
pub(crate) struct Scan {
    pub functions: Vec<FunctionDecl>,
    pub constructors: Vec<ConstructorDecl>,
}

/// Every `function` declaration in `file` that has a body, in source order.
pub fn declarations(file: &SourceFile) -> Result<Vec<FunctionDecl>, CorpusError> {
    scan(file).map(|s| s.functions)
}

/// Comment-anchored functions of `file`, in source order.
pub fn extract_functions(file: &SourceFile) -> Result<Vec<FunctionRecord>, CorpusError> {
    Ok(declarations(file)?
        .iter()
        .filter_map(|d| d.to_record(&file.path))
        .collect())
}

fn malformed(file: &SourceFile, idx: &LineIndex, offset: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::MalformedSource {
        path: file.path.clone(),
        line: idx.line_of(offset),
        column: idx.column_of(offset),
        reason: reason.into(),
    }
}

fn check_balanced(file: &SourceFile, idx: &LineIndex, all: &[Lexeme<'_>]) -> Result<(), CorpusError> {
    let mut open = Vec::new();
    for lx in all.iter().filter(|l| l.kind == LexKind::Punct) {
        if lx.text == "{" {
            open.push(lx.start);
        } else if lx.text == "}" && open.pop().is_none() {
            return Err(malformed(file, idx, lx.start, "unmatched '}'"));
        }
    }
    match open.first() {
        Some(&first) => Err(malformed(file, idx, first, "unclosed '{'")),
        None => Ok(()),
    }
}

pub(crate) fn scan(file: &SourceFile) -> Result<Scan, CorpusError> {
    let text = file.text.as_str();
    let idx = LineIndex::new(text);
    let all = lexer::lex(text).map_err(|e| malformed(file, &idx, e.offset(), e.to_string()))?;
    check_balanced(file, &idx, &all)?;

    let code: Vec<usize> = (0..all.len()).filter(|&i| !all[i].is_comment()).collect();
    let mut functions = Vec::new();
    let mut constructors = Vec::new();
    let mut frames: Vec<Option<String>> = Vec::new();
    let mut pending_contract: Option<String> = None;
    let mut k = 0;
    while k < code.len() {
        let lx = all[code[k]];
        match lx.kind {
            LexKind::Punct if lx.text == "{" => {
                frames.push(pending_contract.take());
                k += 1;
            }
            LexKind::Punct if lx.text == "}" => {
                frames.pop();
                k += 1;
            }
            LexKind::Ident
                if frames.is_empty() && matches!(lx.text, "contract" | "interface" | "library") =>
            {
                match code.get(k + 1).map(|&i| all[i]) {
                    Some(name) if name.kind == LexKind::Ident => {
                        pending_contract = Some(name.text.to_string());
                        k += 2;
                    }
                    _ => k += 1,
                }
            }
            LexKind::Ident if lx.text == "function" || lx.text == "constructor" => {
                let is_ctor = lx.text == "constructor";
                let name = match code.get(k + 1).map(|&i| all[i]) {
                    Some(n) if n.kind == LexKind::Ident && !is_ctor => n.text.to_string(),
                    Some(n) if is_ctor && n.is_punct("(") => String::from("constructor"),
                    _ => {
                        k += 1;
                        continue;
                    }
                };
                let Some(open_k) = header_end(&all, &code, k + 1) else {
                    k += 1;
                    continue;
                };
                if all[code[open_k]].text == ";" {
                    k = open_k + 1;
                    continue;
                }
                let close_k = matching_brace(&all, &code, open_k);
                let body_start = all[code[open_k]].start;
                let body_end = all[code[close_k]].end;
                let contract = frames.iter().rev().find_map(|f| f.clone());
                if is_ctor {
                    constructors.push(ConstructorDecl {
                        contract,
                        header: text[lx.start..body_start].to_string(),
                        body: text[body_start..body_end].to_string(),
                    });
                } else {
                    functions.push(FunctionDecl {
                        name,
                        contract,
                        comment: comment_block(&all, code[k], &idx)
                            .map(|(s, e)| (text[s..e].to_string(), idx.line_of(s))),
                        signature: text[lx.start..body_start].to_string(),
                        body: text[body_start..body_end].to_string(),
                        signature_start: lx.start,
                        body_range: (body_start, body_end),
                        signature_line: idx.line_of(lx.start),
                        end_line: idx.line_of(body_end - 1),
                    });
                }
                k = close_k + 1;
            }
            _ => k += 1,
        }
    }
    Ok(Scan {
        functions,
        constructors,
    })
}

/// Position (in `code`) of the `{` or `;` ending a function header that
/// starts at `from`, skipping parenthesised parameter and modifier lists.
fn header_end(all: &[Lexeme<'_>], code: &[usize], from: usize) -> Option<usize> {
    let mut parens = 0i64;
    for (j, &i) in code.iter().enumerate().skip(from) {
        let lx = all[i];
        if lx.kind != LexKind::Punct {
            continue;
        }
        match lx.text {
            "(" => parens += 1,
            ")" => parens -= 1,
            "{" | ";" if parens == 0 => return Some(j),
            "}" => return None,
            _ => {}
        }
    }
    None
}

fn matching_brace(all: &[Lexeme<'_>], code: &[usize], open_k: usize) -> usize {
    let mut depth = 0i64;
    for (j, &i) in code.iter().enumerate().skip(open_k) {
        let lx = all[i];
        if lx.is_punct("{") {
            depth += 1;
        } else if lx.is_punct("}") {
            depth -= 1;
            if depth == 0 {
                return j;
            }
        }
    }
    // balance was checked up front
    unreachable!("unbalanced braces after balance check")
}

fn last_line(idx: &LineIndex, lx: &Lexeme<'_>) -> usize {
    idx.line_of(lx.end.saturating_sub(1).max(lx.start))
}

/// The run of own-line comments ending on the line directly above the
/// lexeme at `fn_pos`, with no blank line in between. Returns its byte range.
fn comment_block(all: &[Lexeme<'_>], fn_pos: usize, idx: &LineIndex) -> Option<(usize, usize)> {
    let fn_line = idx.line_of(all[fn_pos].start);
    if fn_pos > 0 && last_line(idx, &all[fn_pos - 1]) == fn_line {
        return None;
    }
    let mut expected = fn_line.checked_sub(1)?;
    let mut range: Option<(usize, usize)> = None;
    let mut p = fn_pos;
    while p > 0 && expected > 0 {
        let c = &all[p - 1];
        if !c.is_comment() || last_line(idx, c) != expected {
            break;
        }
        let start_line = idx.line_of(c.start);
        if p >= 2 && last_line(idx, &all[p - 2]) == start_line {
            break;
        }
        range = Some(match range {
            Some((_, end)) => (c.start, end),
            None => (c.start, c.end),
        });
        expected = start_line - 1;
        p -= 1;
    }
    range
}
