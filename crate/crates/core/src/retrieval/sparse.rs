//! Bag-of-terms retrievers. Terms are identifier runs plus single
//! punctuation characters, as produced by [`lexer::terms`].

use std::collections::{BTreeSet, HashMap};

use super::{sliding_windows, top_k, Query, RetrievalConfig, RetrievedSnippet, Window};
use crate::corpus::jaccard;
use crate::lexer;

fn term_freqs(terms: &[&str]) -> HashMap<String, usize> {
    let mut tf = HashMap::new();
    for t in terms {
        *tf.entry((*t).to_string()).or_insert(0) += 1;
    }
    tf
}

fn doc_freqs(docs: &[HashMap<String, usize>]) -> HashMap<&str, usize> {
    let mut df = HashMap::new();
    for d in docs {
        for t in d.keys() {
            *df.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    df
}

fn snippet(w: &Window, score: f64) -> RetrievedSnippet {
    RetrievedSnippet {
        line_index: w.line_index,
        text: w.text.clone(),
        score,
        matched_fragment: None,
    }
}

fn positive(windows: &[Window], scores: Vec<f64>, k: usize) -> Vec<RetrievedSnippet> {
    let hits = windows
        .iter()
        .zip(scores)
        .filter(|(_, s)| *s > 0.0)
        .map(|(w, s)| snippet(w, s))
        .collect();
    top_k(hits, k)
}

/// Okapi BM25 with the non-negative IDF `ln(1 + (N - df + 0.5) / (df + 0.5))`.
/// Repeated query terms contribute once per occurrence.
pub fn bm25_scores(query: &str, docs: &[String], k1: f64, b: f64) -> Vec<f64> {
    let doc_terms: Vec<Vec<&str>> = docs.iter().map(|d| lexer::terms(d)).collect();
    let tfs: Vec<HashMap<String, usize>> = doc_terms.iter().map(|t| term_freqs(t)).collect();
    let df = doc_freqs(&tfs);
    let n = docs.len() as f64;
    let avgdl = doc_terms.iter().map(Vec::len).sum::<usize>() as f64 / n.max(1.0);
    if avgdl == 0.0 {
        return vec![0.0; docs.len()];
    }
    let q_terms = lexer::terms(query);
    doc_terms
        .iter()
        .zip(&tfs)
        .map(|(terms, tf)| {
            let dl = terms.len() as f64;
            q_terms
                .iter()
                .map(|q| {
                    let f = *tf.get(*q).unwrap_or(&0) as f64;
                    if f == 0.0 {
                        return 0.0;
                    }
                    let d = *df.get(q).unwrap_or(&0) as f64;
                    let idf = (1.0 + (n - d + 0.5) / (d + 0.5)).ln();
                    idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * dl / avgdl))
                })
                .sum()
        })
        .collect()
}

/// Cosine similarity of raw-TF x `ln(N / max(df, 1))` vectors. Query terms
/// absent from every document still weigh on the query norm.
pub fn tfidf_scores(query: &str, docs: &[String]) -> Vec<f64> {
    let tfs: Vec<HashMap<String, usize>> = docs.iter().map(|d| term_freqs(&lexer::terms(d))).collect();
    let df = doc_freqs(&tfs);
    let n = docs.len() as f64;
    let idf = |t: &str| (n / (*df.get(t).unwrap_or(&0)).max(1) as f64).ln();
    let weigh = |tf: &HashMap<String, usize>| -> HashMap<String, f64> {
        tf.iter().map(|(t, &c)| (t.clone(), c as f64 * idf(t))).collect()
    };
    let norm = |v: &HashMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let q = weigh(&term_freqs(&lexer::terms(query)));
    let qn = norm(&q);
    tfs.iter()
        .map(|tf| {
            let d = weigh(tf);
            let dn = norm(&d);
            if qn == 0.0 || dn == 0.0 {
                return 0.0;
            }
            let dot: f64 = q.iter().map(|(t, w)| w * d.get(t).unwrap_or(&0.0)).sum();
            dot / (qn * dn)
        })
        .collect()
}

pub fn bm25_retrieve<S: AsRef<str>>(query: &Query, lines: &[S], cfg: &RetrievalConfig) -> Vec<RetrievedSnippet> {
    let windows = sliding_windows(lines, cfg.window_lines, cfg.step_lines);
    let docs: Vec<String> = windows.iter().map(|w| w.text.clone()).collect();
    let scores = bm25_scores(&query.text, &docs, cfg.bm25_k1, cfg.bm25_b);
    positive(&windows, scores, cfg.max_snippets)
}

pub fn tfidf_retrieve<S: AsRef<str>>(query: &Query, lines: &[S], cfg: &RetrievalConfig) -> Vec<RetrievedSnippet> {
    let windows = sliding_windows(lines, cfg.window_lines, cfg.step_lines);
    let docs: Vec<String> = windows.iter().map(|w| w.text.clone()).collect();
    let scores = tfidf_scores(&query.text, &docs);
    positive(&windows, scores, cfg.max_snippets)
}

pub fn jaccard_retrieve<S: AsRef<str>>(query: &Query, lines: &[S], cfg: &RetrievalConfig) -> Vec<RetrievedSnippet> {
    let windows = sliding_windows(lines, cfg.window_lines, cfg.step_lines);
    let q: BTreeSet<&str> = lexer::terms(&query.text).into_iter().collect();
    let scores = windows
        .iter()
        .map(|w| {
            let d: BTreeSet<&str> = lexer::terms(&w.text).into_iter().collect();
            if q.is_empty() && d.is_empty() {
                0.0
            } else {
                jaccard(&q, &d)
            }
        })
        .collect();
    positive(&windows, scores, cfg.max_snippets)
}
