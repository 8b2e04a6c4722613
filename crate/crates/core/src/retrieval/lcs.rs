//! Longest-common-substring retrieval.
//!
//! Substrings of the query are tried from longest to shortest; the first
//! length at which some line contains a candidate decides the match set.
//! Containment is case-sensitive and must not split a word of the line: both
//! ends of the occurrence sit on a sub-word boundary (see
//! [`is_subword_boundary`]). This is what lets a hallucinated
//! `ERC20Interface` find `interface ERC20 {` through `ERC20` rather than
//! through the fragment `nterface`.

use super::{sliding_windows, RetrievalConfig, RetrievedSnippet, Query};
use crate::lexer::is_ident_char;

/// Shorter matches are single-character noise.
pub const MIN_LCS_MATCH: usize = 2;

/// True when position `p` (between `chars[p-1]` and `chars[p]`) separates
/// words or camel-case / underscore sub-words.
pub fn is_subword_boundary(chars: &[char], p: usize) -> bool {
    if p == 0 || p >= chars.len() {
        return true;
    }
    let (a, b) = (chars[p - 1], chars[p]);
    !is_ident_char(a)
        || !is_ident_char(b)
        || a == '_'
        || b == '_'
        || ((a.is_ascii_lowercase() || a.is_ascii_digit()) && b.is_ascii_uppercase())
}

/// Best aligned match of `query` inside `line`: (length, query start).
fn best_match(query: &[char], line: &[char]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut prev = vec![0usize; line.len() + 1];
    let mut cur = vec![0usize; line.len() + 1];
    for i in 1..=query.len() {
        for j in 1..=line.len() {
            cur[j] = if query[i - 1] == line[j - 1] { prev[j - 1] + 1 } else { 0 };
            let run = cur[j];
            if run < MIN_LCS_MATCH || !is_subword_boundary(line, j) {
                continue;
            }
            let floor = best.map_or(MIN_LCS_MATCH, |(len, _)| len.max(MIN_LCS_MATCH));
            if run < floor {
                continue;
            }
            // longest aligned start within this run
            for len in (floor..=run).rev() {
                if is_subword_boundary(line, j - len) {
                    let start = i - len;
                    let better = match best {
                        None => true,
                        Some((bl, bs)) => len > bl || (len == bl && start < bs),
                    };
                    if better {
                        best = Some((len, start));
                    }
                    break;
                }
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

pub fn lcs_retrieve<S: AsRef<str>>(query: &Query, lines: &[S], cfg: &RetrievalConfig) -> Vec<RetrievedSnippet> {
    let q: Vec<char> = query.text.chars().collect();
    let windows = sliding_windows(lines, cfg.window_lines, cfg.step_lines);
    let scored: Vec<(usize, usize, &super::Window)> = windows
        .iter()
        .filter_map(|w| {
            let chars: Vec<char> = w.text.chars().collect();
            best_match(&q, &chars).map(|(len, start)| (len, start, w))
        })
        .collect();
    let Some(top) = scored.iter().map(|(len, _, _)| *len).max() else {
        return Vec::new();
    };
    // windows are produced in ascending line order already
    scored
        .into_iter()
        .filter(|(len, _, _)| *len == top)
        .take(cfg.max_snippets)
        .map(|(len, start, w)| RetrievedSnippet {
            line_index: w.line_index,
            text: w.text.clone(),
            score: len as f64,
            matched_fragment: Some(q[start..start + len].iter().collect()),
        })
        .collect()
}
