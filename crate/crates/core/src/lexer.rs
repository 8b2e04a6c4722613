//! Lexical scanning shared by extraction, retrieval and the text metrics.
//!
//! Two views of the same text exist here. [`lex`] is comment- and
//! string-aware and is what the corpus extractor walks. [`terms`] is the flat
//! term tokenization (maximal identifier runs plus single punctuation marks)
//! used for overlap, ranking and BLEU.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexError {
    #[error("unterminated block comment starting at byte {0}")]
    UnterminatedComment(usize),
    #[error("unterminated string literal starting at byte {0}")]
    UnterminatedString(usize),
}

impl LexError {
    pub fn offset(&self) -> usize {
        match self {
            LexError::UnterminatedComment(o) | LexError::UnterminatedString(o) => *o,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexKind {
    Ident,
    Number,
    Punct,
    Str,
    LineComment,
    BlockComment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lexeme<'a> {
    pub kind: LexKind,
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

impl Lexeme<'_> {
    pub fn is_comment(&self) -> bool {
        matches!(self.kind, LexKind::LineComment | LexKind::BlockComment)
    }

    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == LexKind::Punct && self.text == p
    }

    pub fn is_ident(&self, name: &str) -> bool {
        self.kind == LexKind::Ident && self.text == name
    }
}

pub fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

/// Scans Solidity source into lexemes. Whitespace is dropped; comments are
/// kept because the extractor needs them.
pub fn lex(src: &str) -> Result<Vec<Lexeme<'_>>, LexError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            // keep a CR out of the comment text
            LexKind::LineComment
        } else if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            match src[i + 2..].find("*/") {
                Some(rel) => i = i + 2 + rel + 2,
                None => return Err(LexError::UnterminatedComment(start)),
            }
            LexKind::BlockComment
        } else if c == b'"' || c == b'\'' {
            i += 1;
            loop {
                match bytes.get(i) {
                    None | Some(b'\n') => return Err(LexError::UnterminatedString(start)),
                    Some(b'\\') => i += 2,
                    Some(&b) if b == c => {
                        i += 1;
                        break;
                    }
                    Some(_) => i += 1,
                }
            }
            LexKind::Str
        } else {
            let ch = src[i..].chars().next().expect("in bounds");
            if is_ident_char(ch) {
                while i < bytes.len() && is_ident_char(bytes[i] as char) {
                    i += 1;
                }
                if is_ident_start(ch) {
                    LexKind::Ident
                } else {
                    LexKind::Number
                }
            } else {
                i += ch.len_utf8();
                LexKind::Punct
            }
        };
        let mut end = i.min(bytes.len());
        if kind == LexKind::LineComment && end > start && bytes[end - 1] == b'\r' {
            end -= 1;
        }
        out.push(Lexeme {
            kind,
            text: &src[start..end],
            start,
            end,
        });
    }
    Ok(out)
}

/// Term tokenization: maximal runs of identifier characters, plus every other
/// non-whitespace character as a token of its own.
pub fn terms(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    for (idx, ch) in text.char_indices() {
        if is_ident_char(ch) {
            if run_start.is_none() {
                run_start = Some(idx);
            }
            continue;
        }
        if let Some(s) = run_start.take() {
            out.push(&text[s..idx]);
        }
        if !ch.is_whitespace() {
            out.push(&text[idx..idx + ch.len_utf8()]);
        }
    }
    if let Some(s) = run_start {
        out.push(&text[s..]);
    }
    out
}

/// Maps byte offsets to 1-based line numbers.
#[derive(Debug, Clone)]
pub struct LineIndex {
    starts: Vec<usize>,
}

impl LineIndex {
    pub fn new(text: &str) -> Self {
        let mut starts = vec![0];
        starts.extend(text.match_indices('\n').map(|(i, _)| i + 1));
        LineIndex { starts }
    }

    pub fn line_of(&self, offset: usize) -> usize {
        match self.starts.binary_search(&offset) {
            Ok(i) => i + 1,
            Err(i) => i,
        }
    }

    pub fn column_of(&self, offset: usize) -> usize {
        let line = self.line_of(offset);
        offset - self.starts[line - 1] + 1
    }

    /// Byte offset where 1-based `line` starts, if it exists.
    pub fn line_start(&self, line: usize) -> Option<usize> {
        line.checked_sub(1).and_then(|i| self.starts.get(i).copied())
    }

    pub fn line_count(&self) -> usize {
        self.starts.len()
    }
}

/// Solidity keywords and elementary type names; never treated as candidate
/// hallucinated identifiers.
pub fn is_reserved(word: &str) -> bool {
    const WORDS: &[&str] = &[
        "abstract", "address", "anonymous", "as", "assembly", "bool", "break", "byte", "bytes",
        "calldata", "catch", "constant", "constructor", "continue", "contract", "delete", "do",
        "else", "emit", "enum", "error", "event", "external", "fallback", "false", "for",
        "function", "if", "immutable", "import", "indexed", "interface", "internal", "is",
        "library", "mapping", "memory", "modifier", "new", "override", "payable", "pragma",
        "private", "public", "pure", "receive", "return", "returns", "revert", "storage",
        "string", "struct", "this", "true", "try", "type", "unchecked", "using", "view",
        "virtual", "while", "wei", "gwei", "ether", "seconds", "minutes", "hours", "days",
        "weeks", "int", "uint",
    ];
    if WORDS.contains(&word) {
        return true;
    }
    for prefix in ["uint", "int", "bytes"] {
        if let Some(rest) = word.strip_prefix(prefix) {
            if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()) {
                return true;
            }
        }
    }
    false
}
