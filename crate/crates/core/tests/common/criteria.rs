//! One check per acceptance criterion. Each returns a short detail line on
//! success and the first violation on failure.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use solcomplete::corpus::{build_corpus, inject_verification_statement, FilterConfig, SourceFile, VERIFICATION_STATEMENT};
use solcomplete::executor::{
    Classifier, ClassifierConfig, CompileCheckBackend, ExecutorBackend, SolcCompiler, VerdictStatus,
};
use solcomplete::harness::{
    cmd_report, cmd_run, load_tasks, read_jsonl, HarnessError, ReportOptions, RunOptions, SessionLine, OUTCOMES_FILE,
    SESSIONS_FILE,
};
use solcomplete::metrics::{
    bleu, compilation_at_1, cost_of, crystal_bleu, pass_at_k, pass_at_k_task, pearson, trivially_shared_ngrams,
    CostLedger, CostModel, TaskOutcome, DEFAULT_TRIVIAL_K,
};
use solcomplete::repair::{RepairSession, Stage, Usage};
use solcomplete::retrieval::{
    retrieve, bm25_scores, tfidf_scores, HashingEmbeddingProvider, Query, RetrievalConfig, RetrievalMethod,
};

use super::{build_rar_tasks, design, fixtures, rar_config};

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn choose(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// 1. pass@k against subset enumeration.
pub fn pass_at_k_exact() -> Check {
    let t = Instant::now();
    let mut cases = 0;
    for n in 1..=8u64 {
        for c in 0..=n {
            for k in 1..=n {
                // samples 0..c are correct; count k-subsets holding one of them
                let (mut hit, mut total) = (0u64, 0u64);
                for mask in 0u32..(1 << n) {
                    if mask.count_ones() as u64 != k {
                        continue;
                    }
                    total += 1;
                    if mask & ((1u32 << c) - 1) != 0 {
                        hit += 1;
                    }
                }
                let want = hit as f64 / total as f64;
                let got = pass_at_k_task(n, c, k);
                ensure((got - want).abs() <= 1e-12, || format!("n={n} c={c} k={k}: {got} vs {want}"))?;
                ensure((total as f64 - choose(n, k)).abs() < 0.5, || "subset count".into())?;
                cases += 1;
            }
        }
    }
    let spot = pass_at_k_task(5, 2, 3);
    ensure((spot - 0.9).abs() <= 1e-12, || format!("spot value {spot}"))?;
    let agg = pass_at_k(&[TaskOutcome::new("t", 5, 2, 2)], 3).map_err(|e| e.to_string())?;
    ensure(agg.to_string() == "90.00", || format!("aggregate {agg}"))?;
    let el = t.elapsed();
    ensure(el < Duration::from_secs(1), || format!("took {el:?}"))?;
    Ok(format!("{cases} (n,c,k) cases, spot 0.9, {el:.2?}"))
}

/// 2. LCS against the brute-force oracle.
pub fn lcs_oracle() -> Check {
    let t = Instant::now();
    super::lcs::run_instances(1000, 2024)?;
    let el = t.elapsed();
    ensure(el < Duration::from_secs(10), || format!("took {el:?}"))?;
    Ok(format!("1000 instances, {el:.2?}"))
}

/// 3. Every retriever: bounded, sorted; BM25 and TF-IDF hand fixtures.
pub fn retrieval_contract() -> Check {
    let methods = [
        RetrievalMethod::Lcs,
        RetrievalMethod::Bm25,
        RetrievalMethod::Tfidf,
        RetrievalMethod::Jaccard,
        RetrievalMethod::Dense,
    ];
    let words = ["a", "b", "c", "ab", "Ab", "x_y", "(", ";", "owner", "Owner"];
    let provider = HashingEmbeddingProvider::new(8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..300 {
        let n = rng.gen_range(0..25);
        let lines: Vec<String> = (0..n)
            .map(|_| {
                let w = rng.gen_range(0..6);
                (0..w).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
            })
            .collect();
        let q = words[rng.gen_range(0..words.len())];
        let k = rng.gen_range(1..6);
        for m in methods {
            let cfg = RetrievalConfig {
                method: m,
                max_snippets: k,
                ..Default::default()
            };
            let query = if m == RetrievalMethod::Lcs { Query::identifier(q) } else { Query::line(q) }.unwrap();
            let hits = retrieve(&[query], &lines, &cfg, Some(&provider)).map_err(|e| e.to_string())?;
            ensure(hits.len() <= k, || format!("instance {i} {m:?}: {} > {k}", hits.len()))?;
            let ok = hits.windows(2).all(|w| {
                w[0].score > w[1].score || (w[0].score == w[1].score && w[0].line_index < w[1].line_index)
            });
            ensure(ok, || format!("instance {i} {m:?}: unsorted {hits:?}"))?;
        }
    }
    let docs: Vec<String> = ["a b", "a a b", "c"].iter().map(|s| s.to_string()).collect();
    let bm = bm25_scores("a", &docs, 1.2, 0.75);
    let tf = tfidf_scores("a c", &docs);
    let near = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9);
    ensure(near(&bm, &[0.47000362924573563, 0.5665797174469143, 0.0]), || format!("bm25 {bm:?}"))?;
    ensure(near(&tf, &[0.24482975009584626, 0.30968785970908075, 0.9381453975456101]), || format!("tfidf {tf:?}"))?;
    Ok("300 random instances x 5 methods, fixtures within 1e-9".into())
}

/// 4. Corpus counts on the 20-contract fixture and the injected text.
pub fn corpus_pipeline() -> Check {
    let dir = fixtures().join("corpus20");
    let expected: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixtures().join("corpus20.expected.json")).unwrap()).unwrap();
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    let files: Vec<SourceFile> = paths
        .iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            SourceFile::new(name, fs::read_to_string(p).unwrap()).unwrap()
        })
        .collect();
    ensure(files.len() == 20, || format!("{} files", files.len()))?;
    let built = build_corpus(&files, &FilterConfig::default());
    let got = serde_json::to_value(&built.report).unwrap();
    ensure(got == expected["report"], || format!("report {got} vs {}", expected["report"]))?;
    ensure(built.report.duplication_rate == 0.87, || format!("rate {}", built.report.duplication_rate))?;
    let mut ids: Vec<String> = built.records.iter().map(|r| r.task_id()).collect();
    ids.sort();
    let mut want: Vec<String> = serde_json::from_value(expected["retained_ids"].clone()).unwrap();
    want.sort();
    ensure(ids == want, || format!("retained {ids:?}"))?;
    let injected = inject_verification_statement(&built.records[0]).map_err(|e| e.to_string())?;
    ensure(VERIFICATION_STATEMENT == "uint256 this_is_a_test_variable;", || "statement text".into())?;
    ensure(injected.body.contains("{ uint256 this_is_a_test_variable;"), || injected.body.clone())?;
    Ok(format!(
        "extracted {}, retained {}, dedup {}, rate {}",
        built.report.total_extracted, built.report.retained, built.report.dedup_removed, built.report.duplication_rate
    ))
}

pub fn sessions(run_dir: &Path) -> Vec<RepairSession> {
    let read = read_jsonl::<SessionLine>(&run_dir.join(SESSIONS_FILE)).unwrap();
    let mut out: Vec<RepairSession> = read.items.into_iter().map(|l| l.session).collect();
    out.sort_by(|a, b| (&a.task_id, a.sample).cmp(&(&b.task_id, b.sample)));
    out
}

/// Session content with timings zeroed, sorted by task and sample.
fn session_fingerprint(run_dir: &Path) -> String {
    let mut all = sessions(run_dir);
    for s in &mut all {
        for a in &mut s.attempts {
            a.verdict.elapsed_ms = 0;
        }
    }
    serde_json::to_string(&all).unwrap()
}

fn outcomes(run_dir: &Path) -> Result<Vec<TaskOutcome>, String> {
    let text = fs::read_to_string(run_dir.join(OUTCOMES_FILE)).map_err(|e| e.to_string())?;
    Ok(text.lines().map(|l| serde_json::from_str(l).unwrap()).collect())
}

fn p_c(run_dir: &Path) -> Result<(String, String), String> {
    let o = outcomes(run_dir)?;
    let p = pass_at_k(&o, 1).map_err(|e| e.to_string())?;
    let c = compilation_at_1(&o).map_err(|e| e.to_string())?;
    Ok((p.to_string(), c.to_string()))
}

fn run_into(dir: &Path, tasks: &Path, name: &str, rounds: usize, method: Option<RetrievalMethod>, workers: usize) -> Result<PathBuf, String> {
    let out = dir.join(name);
    let mut cfg = rar_config(tasks, &out, rounds, method);
    cfg.workers = workers;
    let m = cmd_run(&cfg, &RunOptions::default()).map_err(|e| format!("{name}: {e}"))?;
    ensure(m.complete, || format!("{name}: incomplete"))?;
    Ok(out)
}

/// 5. RAR lift on the 50-task fixture, determinism over runs and workers.
pub fn rar_lift() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = build_rar_tasks(tmp.path());
    let base = run_into(tmp.path(), &tasks, "norepair", 0, Some(RetrievalMethod::Lcs), 1)?;
    let (p0, _) = p_c(&base)?;
    ensure(p0 == "40.00", || format!("no-repair P@1 {p0}"))?;

    let mut rar_runs = Vec::new();
    for i in 0..3 {
        rar_runs.push(run_into(tmp.path(), &tasks, &format!("rar{i}"), 1, Some(RetrievalMethod::Lcs), 1)?);
    }
    rar_runs.push(run_into(tmp.path(), &tasks, "rar_w8", 1, Some(RetrievalMethod::Lcs), 8)?);
    let (p1, _) = p_c(&rar_runs[0])?;
    ensure(p1 == "80.00", || format!("RAR P@1 {p1}"))?;

    let first_outcomes = fs::read(rar_runs[0].join(OUTCOMES_FILE)).unwrap();
    let first_sessions = session_fingerprint(&rar_runs[0]);
    for r in &rar_runs[1..] {
        ensure(fs::read(r.join(OUTCOMES_FILE)).unwrap() == first_outcomes, || format!("{} outcomes differ", r.display()))?;
        ensure(session_fingerprint(r) == first_sessions, || format!("{} sessions differ", r.display()))?;
    }

    let d = design();
    let decl: BTreeMap<String, String> = serde_json::from_value(d["declaration_lines"].clone()).unwrap();
    let by_task: BTreeMap<String, RepairSession> =
        sessions(&rar_runs[0]).into_iter().map(|s| (s.task_id.clone(), s)).collect();
    for (tid, line) in &decl {
        let s = by_task.get(tid).ok_or_else(|| format!("no session for {tid}"))?;
        let repair = s.attempts.get(1).ok_or_else(|| format!("{tid}: no repair attempt"))?;
        ensure(repair.prompt.contains(line.as_str()), || format!("{tid}: repair prompt lacks {line:?}"))?;
        ensure(s.final_status == VerdictStatus::Pass, || format!("{tid}: not repaired"))?;
    }

    // the same repair loop with nothing retrieved stays at the baseline
    let blind = run_into(tmp.path(), &tasks, "blind", 1, None, 1)?;
    let (pb, _) = p_c(&blind)?;
    ensure(pb == "40.00", || format!("repair without retrieval P@1 {pb}"))?;
    Ok(format!("P@1 {p0} -> {p1}; {} declaration lines retrieved; 3 runs + 8 workers identical", decl.len()))
}

/// 6. Cost under the default prices and additivity over sessions.
pub fn cost_ledger() -> Check {
    let model = CostModel::default();
    let mut ledger = CostLedger::default();
    ledger.add_usage(
        Stage::Completion,
        Usage {
            prompt_tokens: 1_000_000,
            completion_tokens: 1_000_000,
        },
        &model,
    );
    ensure(format!("{:.2}", ledger.total_usd) == "0.75", || format!("1M+1M -> {}", ledger.total_usd))?;

    let tmp = tempfile::tempdir().unwrap();
    let tasks = build_rar_tasks(tmp.path());
    let run = run_into(tmp.path(), &tasks, "cost", 1, Some(RetrievalMethod::Lcs), 2)?;
    let all = sessions(&run);
    let whole = cost_of(&all, &model);
    let usage: Usage = all.iter().map(RepairSession::total_usage).sum();
    let hand = usage.prompt_tokens as f64 * 0.15 / 1e6 + usage.completion_tokens as f64 * 0.6 / 1e6;
    ensure((whole.total_usd - hand).abs() < 0.005, || format!("{} vs hand {hand}", whole.total_usd))?;
    let mut summed = CostLedger::default();
    for s in &all {
        summed.merge(&cost_of(std::slice::from_ref(s), &model));
    }
    ensure(summed.usage == whole.usage, || "usage not additive".into())?;
    ensure((summed.total_usd - whole.total_usd).abs() < 1e-12, || "cost not additive".into())?;
    let stages: f64 = whole.by_stage.values().map(|s| s.usd).sum();
    ensure((stages - whole.total_usd).abs() < 1e-12, || "stage costs do not sum".into())?;
    Ok(format!("1M+1M = $0.75; {} sessions, ${:.6}", all.len(), whole.total_usd))
}

/// 7. P@1 <= C@1 on fixture runs, CrystalBLEU <= BLEU, Pearson oracles.
pub fn metric_relationships() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = build_rar_tasks(tmp.path());
    let task_list = load_tasks(&tasks).map_err(|e| e.to_string())?;
    let mut pairs = Vec::new();
    for (name, rounds, method) in [("a", 0, Some(RetrievalMethod::Lcs)), ("b", 1, Some(RetrievalMethod::Lcs)), ("c", 1, None)] {
        let run = run_into(tmp.path(), &tasks, name, rounds, method, 1)?;
        let o = outcomes(&run)?;
        let p = pass_at_k(&o, 1).map_err(|e| e.to_string())?;
        let c = compilation_at_1(&o).map_err(|e| e.to_string())?;
        ensure(p.fraction() <= c.fraction(), || format!("{name}: P@1 {p} > C@1 {c}"))?;
        for s in sessions(&run) {
            let reference = &task_list.iter().find(|t| t.id == s.task_id).unwrap().body;
            if let Some(body) = s.attempts.last().and_then(|a| a.body.clone()) {
                pairs.push((body, reference.clone()));
            }
        }
    }
    let refs: Vec<&str> = task_list.iter().map(|t| t.body.as_str()).collect();
    let trivial = trivially_shared_ngrams(&refs, DEFAULT_TRIVIAL_K);
    ensure(!trivial.is_empty(), || "empty trivial set".into())?;
    for (cand, reference) in &pairs {
        let (b, cb) = (bleu(cand, reference), crystal_bleu(cand, reference, &trivial));
        ensure(cb <= b + 1e-12, || format!("crystal {cb} > bleu {b} for {cand:?}"))?;
    }
    let small: HashSet<_> = trivially_shared_ngrams(&refs, 5);
    for (cand, reference) in &pairs {
        ensure(crystal_bleu(cand, reference, &small) <= bleu(cand, reference) + 1e-12, || "K=5".into())?;
    }
    let xs = [1.0, 2.0, 3.0, 4.0];
    let r = |ys: [f64; 4]| pearson(&xs, &ys).map_err(|e| e.to_string());
    ensure((r([2.0, 4.0, 6.0, 8.0])? - 1.0).abs() < 1e-12, || "pearson 1".into())?;
    ensure((r([8.0, 6.0, 4.0, 2.0])? + 1.0).abs() < 1e-12, || "pearson -1".into())?;
    ensure((r([1.0, 3.0, 2.0, 4.0])? - 0.8).abs() < 1e-12, || "pearson 0.8".into())?;
    Ok(format!("3 runs; {} BLEU pairs; pearson 1/-1/0.8", pairs.len()))
}

/// 8. Abort plus a torn line, then resume; report reproducibility.
pub fn replay_resume() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = build_rar_tasks(tmp.path());
    let whole = run_into(tmp.path(), &tasks, "whole", 1, Some(RetrievalMethod::Lcs), 1)?;

    let cut = tmp.path().join("cut");
    let mut cfg = rar_config(&tasks, &cut, 1, Some(RetrievalMethod::Lcs));
    cfg.workers = 4;
    match cmd_run(&cfg, &RunOptions { abort_after: Some(17) }) {
        Err(HarnessError::Aborted(n)) => ensure(n == 17, || format!("aborted after {n}"))?,
        other => return Err(format!("expected an abort, got {other:?}")),
    }
    ensure(!cut.join(OUTCOMES_FILE).exists(), || "outcomes written by an aborted run".into())?;
    let mut log = fs::OpenOptions::new().append(true).open(cut.join(SESSIONS_FILE)).unwrap();
    std::io::Write::write_all(&mut log, b"{\"schema\":\"solcomplete.session/v1\",\"task_id\":\"m0").unwrap();
    drop(log);
    cfg.workers = 2;
    let m = cmd_run(&cfg, &RunOptions::default()).map_err(|e| format!("resume: {e}"))?;
    ensure(m.complete && m.sessions_total == 50, || format!("resume wrote {} sessions", m.sessions_total))?;
    let a = fs::read(whole.join(OUTCOMES_FILE)).unwrap();
    let b = fs::read(cut.join(OUTCOMES_FILE)).unwrap();
    ensure(a == b, || "resumed outcomes differ".into())?;
    ensure(session_fingerprint(&whole) == session_fingerprint(&cut), || "resumed sessions differ".into())?;

    let opts = ReportOptions::default();
    let runs = vec![whole.clone(), cut.clone()];
    let (r1, r2) = (tmp.path().join("rep1"), tmp.path().join("rep2"));
    cmd_report(&runs, &opts, &r1).map_err(|e| e.to_string())?;
    cmd_report(&runs, &opts, &r2).map_err(|e| e.to_string())?;
    let mut files = 0;
    for entry in fs::read_dir(&r1).unwrap() {
        let name = entry.unwrap().file_name();
        ensure(fs::read(r1.join(&name)).unwrap() == fs::read(r2.join(&name)).unwrap(), || {
            format!("{} differs", name.to_string_lossy())
        })?;
        files += 1;
    }
    ensure(files >= 3, || format!("only {files} report files"))?;
    Ok(format!("abort at 17 + torn line resumed identically; {files} report files identical"))
}

/// 9. No compiler and no network: the solc adapter reports itself unavailable
/// instead of failing, and everything above runs on fixtures.
pub fn offline(elapsed_so_far: Duration) -> Check {
    let compiler = SolcCompiler::new(
        "/nonexistent/solc",
        Duration::from_secs(5),
        Classifier::new(&ClassifierConfig::default()).unwrap(),
    );
    let src = "contract A {\n    /// one\n    function f() public pure returns (uint) { return 1; }\n}\n";
    let file = SourceFile::new("a.sol", src).unwrap();
    let rec = solcomplete::corpus::extract_functions(&file).unwrap().remove(0);
    let v = CompileCheckBackend::new(compiler).verify(src, src, &rec);
    ensure(v.status == VerdictStatus::ExecutorUnavailable, || format!("status {:?}", v.status))?;
    ensure(elapsed_so_far < Duration::from_secs(300), || format!("criteria took {elapsed_so_far:?}"))?;
    Ok(format!("missing solc -> executor_unavailable; criteria ran in {elapsed_so_far:.2?}"))
}
