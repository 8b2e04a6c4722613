use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::jsonl::{read_jsonl, write_atomic};
use super::run::{load_sessions, OutcomeLine, RunManifest, MANIFEST_FILE, OUTCOMES_FILE, SESSIONS_FILE};
use super::{load_tasks, HarnessError, POINTS_SCHEMA};
use crate::corpus::VERIFICATION_STATEMENT;
use crate::metrics::{
    build_report, corpus_bleu, corpus_crystal_bleu, render_table, CostLedger, CostModel, CostPoint, Report, RunSummary,
    DEFAULT_TRIVIAL_K,
};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";
pub const POINTS_JSON: &str = "points.json";

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// Empty means each run's configured k values (union).
    pub k_values: Vec<u64>,
    /// Overrides every run's configured prices.
    pub cost: Option<CostModel>,
    pub trivial_k: Option<usize>,
}

#[derive(Serialize)]
struct Points<'a> {
    schema: &'a str,
    points: &'a [CostPoint],
}

fn read_manifest(dir: &Path) -> Result<RunManifest, HarnessError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Corrupt {
        path: path.display().to_string(),
        line: 1,
        message: e.to_string(),
    })
}

/// BLEU and CrystalBLEU of sample 0's final body against the reference
/// bodies; None when the task file is gone.
fn bleu_scores(
    manifest: &RunManifest,
    sessions: &[crate::repair::RepairSession],
    trivial_k: usize,
) -> Result<(Option<f64>, Option<f64>), HarnessError> {
    let task_file = &manifest.config.task_file;
    if !task_file.is_file() {
        log::warn!("{} missing; skipping BLEU", task_file.display());
        return Ok((None, None));
    }
    let tasks = load_tasks(task_file)?;
    let refs: HashMap<&str, &str> = tasks.iter().map(|t| (t.id.as_str(), t.body.as_str())).collect();
    let mut firsts: Vec<(&str, &str)> = sessions
        .iter()
        .filter(|s| s.sample == 0)
        .filter_map(|s| {
            refs.get(s.task_id.as_str())?;
            let body = s.attempts.last().and_then(|a| a.body.as_deref()).unwrap_or("");
            Some((s.task_id.as_str(), body))
        })
        .collect();
    firsts.sort();
    if firsts.is_empty() {
        return Ok((None, None));
    }
    let pairs: Vec<(&str, &str)> = firsts.iter().map(|(id, body)| (*body, refs[id])).collect();
    let mut corpus: Vec<&str> = refs.values().copied().collect();
    corpus.sort_unstable();
    let trivial = crate::metrics::trivially_shared_ngrams(&corpus, trivial_k);
    // candidates never carry the statement; strip it defensively anyway
    let cleaned: Vec<(String, &str)> = pairs.iter().map(|(c, r)| (c.replace(VERIFICATION_STATEMENT, ""), *r)).collect();
    let pairs: Vec<(&str, &str)> = cleaned.iter().map(|(c, r)| (c.as_str(), *r)).collect();
    Ok((Some(corpus_bleu(&pairs)), Some(corpus_crystal_bleu(&pairs, &trivial))))
}

/// Recomputes every metric from persisted run directories and writes
/// `report.json`, `report.txt` and `points.json` into `out_dir`.
pub fn cmd_report(run_dirs: &[PathBuf], opts: &ReportOptions, out_dir: &Path) -> Result<Report, HarnessError> {
    if run_dirs.is_empty() {
        return Err(HarnessError::Config("report needs at least one run directory".into()));
    }
    if let Some(c) = &opts.cost {
        c.validate()?;
    }
    let mut summaries = Vec::new();
    let mut ks = opts.k_values.clone();
    for dir in run_dirs {
        let manifest = read_manifest(dir)?;
        if opts.k_values.is_empty() {
            ks.extend(&manifest.config.k_values);
        }
        let outcomes = read_jsonl::<OutcomeLine>(&dir.join(OUTCOMES_FILE))?;
        let (mut sessions, _) = load_sessions(&dir.join(SESSIONS_FILE))?;
        sessions.sort_by(|a, b| a.task_id.cmp(&b.task_id).then(a.sample.cmp(&b.sample)));
        let model = opts.cost.unwrap_or(manifest.config.cost);
        let mut cost = CostLedger::default();
        for s in &sessions {
            cost.add_session(s, &model);
        }
        let (bleu, crystal) = bleu_scores(&manifest, &sessions, opts.trivial_k.unwrap_or(DEFAULT_TRIVIAL_K))?;
        summaries.push(RunSummary {
            label: manifest.label.clone(),
            budget: manifest.config.context.budget_tokens,
            outcomes: outcomes.items.into_iter().map(|l| l.outcome).collect(),
            cost,
            bleu,
            crystal_bleu: crystal,
        });
    }
    let report = build_report(&summaries, &ks)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&out_dir.join(REPORT_JSON), format!("{json}\n").as_bytes())?;
    write_atomic(&out_dir.join(REPORT_TABLE), render_table(&report).as_bytes())?;
    let points = serde_json::to_string_pretty(&Points {
        schema: POINTS_SCHEMA,
        points: &report.points,
    })
    .expect("points serialize");
    write_atomic(&out_dir.join(POINTS_JSON), format!("{points}\n").as_bytes())?;
    Ok(report)
}
