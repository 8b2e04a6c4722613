use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::jsonl::{append_line, open_append, read_jsonl, write_atomic};
use super::{load_tasks, HarnessError, RunConfig, TaskRecord, MANIFEST_SCHEMA, OUTCOME_SCHEMA, SESSION_SCHEMA};
use crate::context::counter_by_name;
use crate::executor::backend_from_config;
use crate::metrics::TaskOutcome;
use crate::repair::{
    run_rar, CompletionTask, HttpChatClient, ModelClient, RepairSession, ScriptedClient, TEMPLATE_VERSION,
};
use crate::retrieval::{EmbeddingProvider, ProviderError};

pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLine {
    pub schema: String,
    #[serde(flatten)]
    pub session: RepairSession,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeLine {
    pub schema: String,
    #[serde(flatten)]
    pub outcome: TaskOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncompleteTask {
    pub task_id: String,
    pub samples_done: usize,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeIndexEntry {
    pub task_id: String,
    /// 1-based line in the outcomes file.
    pub line: usize,
    pub n: u64,
    pub c: u64,
    pub c_compile: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub harness_version: String,
    pub template_version: String,
    pub label: String,
    pub config: RunConfig,
    pub started_at: String,
    pub finished_at: String,
    pub client: String,
    pub executor: String,
    /// Distinct `backend tool-version` strings seen in verdicts.
    pub tool_versions: BTreeSet<String>,
    pub task_file_sha256: String,
    pub tasks_total: usize,
    pub sessions_total: usize,
    pub complete: bool,
    pub incomplete: Vec<IncompleteTask>,
    pub outcomes: Vec<OutcomeIndexEntry>,
    pub outcomes_sha256: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after this many sessions are written, leaving the run unfinished
    /// as if the process had been killed.
    pub abort_after: Option<usize>,
}

/// Serializes calls into a provider that cannot take concurrent requests.
struct Exclusive<'a> {
    inner: &'a dyn EmbeddingProvider,
    lock: Mutex<()>,
}

impl EmbeddingProvider for Exclusive<'_> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let _g = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        self.inner.embed(texts)
    }
}

fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn check_config_snapshot(out_dir: &Path, cfg: &RunConfig) -> Result<(), HarnessError> {
    let path = out_dir.join(CONFIG_FILE);
    let current = serde_json::to_value(cfg).expect("config serializes");
    if path.exists() {
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        let prev: serde_json::Value = serde_json::from_str(&text).map_err(|e| HarnessError::Corrupt {
            path: path.display().to_string(),
            line: 1,
            message: e.to_string(),
        })?;
        // worker count may change between resumes
        let strip = |mut v: serde_json::Value| {
            v.as_object_mut().map(|o| o.remove("workers"));
            v
        };
        if strip(prev) != strip(current) {
            return Err(HarnessError::Config(format!(
                "{} holds a run with a different configuration",
                out_dir.display()
            )));
        }
        return Ok(());
    }
    let json = serde_json::to_string_pretty(&current).expect("config serializes");
    write_atomic(&path, format!("{json}\n").as_bytes())
}

fn build_client(cfg: &RunConfig) -> Result<Box<dyn ModelClient>, HarnessError> {
    let cfg_err = |e: crate::repair::ClientError| HarnessError::Config(e.to_string());
    Ok(match &cfg.mock_client {
        Some(p) => Box::new(ScriptedClient::from_path(p).map_err(cfg_err)?),
        None => Box::new(HttpChatClient::new(cfg.model.clone(), cfg.seed).map_err(cfg_err)?),
    })
}

/// Sessions on disk, first record per (task, sample) kept.
pub(crate) fn load_sessions(path: &Path) -> Result<(Vec<RepairSession>, u64), HarnessError> {
    let read = read_jsonl::<SessionLine>(path)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for line in read.items {
        if line.schema != SESSION_SCHEMA {
            return Err(HarnessError::Corrupt {
                path: path.display().to_string(),
                line: out.len() + 1,
                message: format!("unknown schema {}", line.schema),
            });
        }
        if seen.insert((line.session.task_id.clone(), line.session.sample)) {
            out.push(line.session);
        }
    }
    Ok((out, read.valid_len))
}

/// Runs (or resumes) every task × sample and writes sessions, outcomes and
/// the manifest into `cfg.out_dir`.
pub fn cmd_run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunManifest, HarnessError> {
    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    cfg.validate()?;
    let tasks = load_tasks(&cfg.task_file)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| HarnessError::io(&cfg.out_dir, e))?;
    check_config_snapshot(&cfg.out_dir, cfg)?;

    let sessions_path = cfg.out_dir.join(SESSIONS_FILE);
    let (prior, valid_len) = load_sessions(&sessions_path)?;
    let known: HashMap<&str, &TaskRecord> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    if let Some(s) = prior.iter().find(|s| !known.contains_key(s.task_id.as_str())) {
        return Err(HarnessError::Config(format!(
            "session log names task {} which is not in {}",
            s.task_id,
            cfg.task_file.display()
        )));
    }
    let done: BTreeSet<(String, usize)> = prior.iter().map(|s| (s.task_id.clone(), s.sample)).collect();

    let counter = counter_by_name(&cfg.context.counter).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut failures: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut prepared: Vec<(CompletionTask, usize)> = Vec::new();
    for t in &tasks {
        let pending: Vec<usize> = (0..cfg.samples).filter(|s| !done.contains(&(t.id.clone(), *s))).collect();
        if pending.is_empty() {
            continue;
        }
        let built = t
            .source_file()
            .and_then(|f| CompletionTask::new(&f, &t.record(), cfg.context.budget_tokens, counter.as_ref()).map_err(|e| HarnessError::Config(e.to_string())));
        match built {
            Ok(ct) => prepared.extend(pending.into_iter().map(|s| (ct.clone(), s))),
            Err(e) => failures.entry(t.id.clone()).or_default().push(e.to_string()),
        }
    }

    let client = build_client(cfg)?;
    let mut exec_cfg = cfg.executor.clone();
    if let Some(f) = exec_cfg.fuzz.as_mut() {
        f.seed = cfg.seed;
    }
    let backend = backend_from_config(&exec_cfg, Path::new("")).map_err(|e| HarnessError::Config(e.to_string()))?;
    let provider_box = cfg.embedding.as_ref().map(|e| e.provider()).transpose()?;
    let exclusive = provider_box.as_deref().map(|p| Exclusive {
        inner: p,
        lock: Mutex::new(()),
    });
    let provider: Option<&dyn EmbeddingProvider> = match (&provider_box, &exclusive) {
        (Some(p), Some(x)) if !p.allows_concurrent_calls() => Some(x),
        (Some(p), _) => Some(p.as_ref()),
        _ => None,
    };

    let mut log = open_append(&sessions_path, valid_len)?;
    let stop = AtomicBool::new(false);
    let (job_tx, job_rx) = crossbeam_channel::unbounded::<&(CompletionTask, usize)>();
    for job in &prepared {
        job_tx.send(job).expect("receiver alive");
    }
    drop(job_tx);
    let (res_tx, res_rx) = crossbeam_channel::unbounded();
    let mut written = 0usize;
    let mut write_err = None;
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.min(prepared.len().max(1)) {
            let (job_rx, res_tx) = (job_rx.clone(), res_tx.clone());
            let (client, backend, stop) = (client.as_ref(), backend.as_ref(), &stop);
            scope.spawn(move || {
                while let Ok((task, sample)) = job_rx.recv() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let r = run_rar(task, *sample, client, backend, &cfg.repair, provider);
                    if res_tx.send((task.task_id.clone(), r)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(res_tx);
        // single writer: the coordinator owns the log
        for (task_id, result) in res_rx.iter() {
            if stop.load(Ordering::SeqCst) {
                continue;
            }
            match result {
                Ok(session) => {
                    let line = SessionLine {
                        schema: SESSION_SCHEMA.into(),
                        session,
                    };
                    if let Err(e) = append_line(&mut log, &line) {
                        write_err = Some(HarnessError::io(&sessions_path, e));
                        stop.store(true, Ordering::SeqCst);
                        continue;
                    }
                    written += 1;
                    if opts.abort_after.is_some_and(|n| written >= n) {
                        stop.store(true, Ordering::SeqCst);
                    }
                }
                Err(e) => {
                    log::warn!("task {task_id}: {e}");
                    failures.entry(task_id).or_default().push(e.to_string());
                }
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    if stop.load(Ordering::SeqCst) {
        return Err(HarnessError::Aborted(written));
    }
    drop(log);

    let (sessions, _) = load_sessions(&sessions_path)?;
    let mut by_task: BTreeMap<&str, Vec<&RepairSession>> = BTreeMap::new();
    for s in &sessions {
        by_task.entry(s.task_id.as_str()).or_default().push(s);
    }
    let mut outcomes_text = String::new();
    let mut index = Vec::new();
    let mut incomplete = Vec::new();
    let mut tool_versions = BTreeSet::new();
    let mut ids: Vec<&str> = known.keys().copied().collect();
    ids.sort_unstable();
    for id in ids {
        let mut group: Vec<RepairSession> = by_task.get(id).map(|g| g.iter().map(|s| (*s).clone()).collect()).unwrap_or_default();
        group.sort_by_key(|s| s.sample);
        for s in &group {
            for a in &s.attempts {
                let v = &a.verdict;
                tool_versions.insert(match &v.tool_version {
                    Some(t) => format!("{} {t}", v.backend),
                    None => v.backend.clone(),
                });
            }
        }
        if group.len() < cfg.samples {
            incomplete.push(IncompleteTask {
                task_id: id.to_string(),
                samples_done: group.len(),
                errors: failures.remove(id).unwrap_or_default(),
            });
            continue;
        }
        let outcome = TaskOutcome::from_sessions(id, &group);
        index.push(OutcomeIndexEntry {
            task_id: id.to_string(),
            line: index.len() + 1,
            n: outcome.n,
            c: outcome.c,
            c_compile: outcome.c_compile,
        });
        let line = OutcomeLine {
            schema: OUTCOME_SCHEMA.into(),
            outcome,
        };
        outcomes_text.push_str(&serde_json::to_string(&line).expect("outcome serializes"));
        outcomes_text.push('\n');
    }
    let outcomes_path = cfg.out_dir.join(OUTCOMES_FILE);
    write_atomic(&outcomes_path, outcomes_text.as_bytes())?;

    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        harness_version: env!("CARGO_PKG_VERSION").into(),
        template_version: TEMPLATE_VERSION.into(),
        label: cfg.display_label(),
        config: cfg.clone(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        client: client.name().to_string(),
        executor: backend.name().to_string(),
        tool_versions,
        task_file_sha256: sha256_file(&cfg.task_file)?,
        tasks_total: tasks.len(),
        sessions_total: sessions.len(),
        complete: incomplete.is_empty(),
        incomplete,
        outcomes: index,
        outcomes_sha256: hex::encode(Sha256::digest(outcomes_text.as_bytes())),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&cfg.out_dir.join(MANIFEST_FILE), format!("{json}\n").as_bytes())?;
    Ok(manifest)
}
