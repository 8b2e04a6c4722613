//! Brute-force oracle for LCS retrieval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use solcomplete::retrieval::{lcs_retrieve, Query, RetrievalConfig};

fn ident(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

// independent restatement of the alignment rule
fn aligned(line: &[char], p: usize) -> bool {
    if p == 0 || p == line.len() {
        return true;
    }
    let (a, b) = (line[p - 1], line[p]);
    !ident(a) || !ident(b) || a == '_' || b == '_' || ((a.is_ascii_lowercase() || a.is_ascii_digit()) && b.is_ascii_uppercase())
}

fn contains_aligned(line: &[char], needle: &[char]) -> bool {
    line.len() >= needle.len()
        && (0..=line.len() - needle.len())
            .any(|i| &line[i..i + needle.len()] == needle && aligned(line, i) && aligned(line, i + needle.len()))
}

/// (line index, length, fragment) in output order.
pub fn brute(query: &str, lines: &[String], k: usize) -> Vec<(usize, usize, String)> {
    let q: Vec<char> = query.chars().collect();
    let ls: Vec<Vec<char>> = lines.iter().map(|l| l.chars().collect()).collect();
    for len in (2..=q.len()).rev() {
        let mut hits = Vec::new();
        for (idx, line) in ls.iter().enumerate() {
            if let Some(start) = (0..=q.len() - len).find(|&s| contains_aligned(line, &q[s..s + len])) {
                hits.push((idx, len, q[start..start + len].iter().collect()));
            }
        }
        if !hits.is_empty() {
            hits.truncate(k);
            return hits;
        }
    }
    Vec::new()
}

const ALPHABET: &[u8] = b"abcAB_1 (;";

fn random_text(rng: &mut ChaCha8Rng, max: usize, alphabet: &[u8]) -> String {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())] as char).collect()
}

pub fn run_instances(count: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let query = loop {
            let q = random_text(&mut rng, 12, b"abcAB_1");
            if !q.is_empty() {
                break q;
            }
        };
        let lines: Vec<String> = (0..50).map(|_| random_text(&mut rng, 24, ALPHABET)).collect();
        let k = rng.gen_range(1..=6);
        let cfg = RetrievalConfig {
            max_snippets: k,
            ..Default::default()
        };
        let got: Vec<(usize, usize, String)> = lcs_retrieve(&Query::identifier(query.as_str()).unwrap(), &lines, &cfg)
            .into_iter()
            .map(|s| (s.line_index, s.score as usize, s.matched_fragment.unwrap_or_default()))
            .collect();
        let want = brute(&query, &lines, k);
        if got != want {
            return Err(format!("instance {i}: query {query:?}: got {got:?}, want {want:?}"));
        }
    }
    Ok(())
}
