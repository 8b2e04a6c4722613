use std::collections::{BTreeSet, HashSet};

use super::{FilterReport, FunctionRecord};
use crate::lexer;

/// Threshold above which two functions count as overlapping.
pub const JACCARD_OVERLAP_THRESHOLD: f64 = 0.9;

fn dedup_key(record: &FunctionRecord) -> String {
    record
        .render()
        .lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Drops exact duplicates (comment + signature + body, trailing whitespace
/// per line ignored), keeping the first occurrence.
pub fn dedup_exact(records: &[FunctionRecord]) -> (Vec<FunctionRecord>, FilterReport) {
    let mut seen = HashSet::new();
    let retained: Vec<FunctionRecord> = records
        .iter()
        .filter(|r| seen.insert(dedup_key(r)))
        .cloned()
        .collect();
    let mut report = FilterReport {
        total_extracted: records.len(),
        retained: retained.len(),
        dedup_removed: records.len() - retained.len(),
        ..FilterReport::default()
    };
    report.recompute_rate();
    (retained, report)
}

pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn term_set(text: &str) -> BTreeSet<&str> {
    lexer::terms(text).into_iter().collect()
}

/// Jaccard similarity of the term sets of two full function texts.
pub fn jaccard_overlap(a: &FunctionRecord, b: &FunctionRecord) -> f64 {
    let (ta, tb) = (a.render(), b.render());
    jaccard(&term_set(&ta), &term_set(&tb))
}

/// Fraction of `records` with at least one `reference` function at or above
/// `threshold` similarity.
pub fn overlap_fraction(records: &[FunctionRecord], reference: &[FunctionRecord], threshold: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let ref_texts: Vec<String> = reference.iter().map(FunctionRecord::render).collect();
    let ref_sets: Vec<BTreeSet<&str>> = ref_texts.iter().map(|t| term_set(t)).collect();
    let hits = records
        .iter()
        .filter(|r| {
            let text = r.render();
            let set = term_set(&text);
            ref_sets.iter().any(|s| jaccard(&set, s) >= threshold)
        })
        .count();
    hits as f64 / records.len() as f64
}
