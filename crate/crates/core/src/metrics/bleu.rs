//! BLEU-4 and CrystalBLEU over lexer terms.
//!
//! Zero-match orders are smoothed to `epsilon / total` (empty orders to
//! `epsilon`), and a candidate with no matching unigram scores 0.

use std::collections::{HashMap, HashSet};

use crate::lexer;

pub const BLEU_EPSILON: f64 = 1e-9;
pub const DEFAULT_TRIVIAL_K: usize = 500;
const MAX_ORDER: usize = 4;

pub type Ngram = Vec<String>;

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped matches and candidate totals per order for one pair.
fn stats(candidate: &str, reference: &str, trivial: &HashSet<Ngram>) -> ([u64; MAX_ORDER], [u64; MAX_ORDER], usize, usize) {
    let c: Vec<&str> = lexer::terms(candidate);
    let r: Vec<&str> = lexer::terms(reference);
    let mut num = [0u64; MAX_ORDER];
    let mut den = [0u64; MAX_ORDER];
    for n in 1..=MAX_ORDER {
        let cc = ngram_counts(&c, n);
        let rc = ngram_counts(&r, n);
        den[n - 1] = cc.values().sum::<usize>() as u64;
        num[n - 1] = cc
            .iter()
            .filter(|(g, _)| trivial.is_empty() || !trivial.contains(&g.iter().map(|s| s.to_string()).collect::<Ngram>()))
            .map(|(g, &k)| k.min(*rc.get(g).unwrap_or(&0)) as u64)
            .sum();
    }
    (num, den, c.len(), r.len())
}

fn combine(num: &[u64; MAX_ORDER], den: &[u64; MAX_ORDER], cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 || num[0] == 0 {
        return 0.0;
    }
    let log_sum: f64 = (0..MAX_ORDER)
        .map(|i| {
            let d = den[i].max(1) as f64;
            let p = if num[i] == 0 { BLEU_EPSILON / d } else { num[i] as f64 / d };
            p.ln()
        })
        .sum();
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    100.0 * bp * (log_sum / MAX_ORDER as f64).exp()
}

pub fn bleu(candidate: &str, reference: &str) -> f64 {
    crystal_bleu(candidate, reference, &HashSet::new())
}

/// BLEU with matches of trivially shared n-grams removed from the clipped
/// counts. Candidate totals are unchanged, so the score never exceeds BLEU.
pub fn crystal_bleu(candidate: &str, reference: &str, trivial: &HashSet<Ngram>) -> f64 {
    let (num, den, c, r) = stats(candidate, reference, trivial);
    combine(&num, &den, c, r)
}

/// Corpus-level score: counts are summed over all (candidate, reference)
/// pairs before combining.
pub fn corpus_crystal_bleu(pairs: &[(&str, &str)], trivial: &HashSet<Ngram>) -> f64 {
    let mut num = [0u64; MAX_ORDER];
    let mut den = [0u64; MAX_ORDER];
    let (mut c, mut r) = (0, 0);
    for (cand, reference) in pairs {
        let (n, d, cl, rl) = stats(cand, reference, trivial);
        for i in 0..MAX_ORDER {
            num[i] += n[i];
            den[i] += d[i];
        }
        c += cl;
        r += rl;
    }
    combine(&num, &den, c, r)
}

pub fn corpus_bleu(pairs: &[(&str, &str)]) -> f64 {
    corpus_crystal_bleu(pairs, &HashSet::new())
}

/// The `k` most frequent n-grams (orders 1 to 4) over `corpus`; ties are
/// broken by the n-gram itself so the set is deterministic.
pub fn trivially_shared_ngrams<S: AsRef<str>>(corpus: &[S], k: usize) -> HashSet<Ngram> {
    let mut counts: HashMap<Vec<&str>, usize> = HashMap::new();
    let docs: Vec<Vec<&str>> = corpus.iter().map(|d| lexer::terms(d.as_ref())).collect();
    for toks in &docs {
        for n in 1..=MAX_ORDER {
            if toks.len() >= n {
                for w in toks.windows(n) {
                    *counts.entry(w.to_vec()).or_insert(0) += 1;
                }
            }
        }
    }
    let mut ranked: Vec<(Vec<&str>, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(k)
        .map(|(g, _)| g.into_iter().map(String::from).collect())
        .collect()
}
