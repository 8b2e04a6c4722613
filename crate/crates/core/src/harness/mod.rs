//! Dataset build, runs, and reports, with every artifact persisted as JSON
//! or JSON Lines.

mod config;
mod jsonl;
mod report;
mod run;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{build_corpus, FilterConfig, FilterReport, FunctionRecord, SourceFile};
use crate::metrics::MetricsError;

pub use config::{EmbeddingConfig, EmbeddingKind, RunConfig};
pub use jsonl::{append_line, read_jsonl, write_atomic, JsonlRead};
pub use report::{cmd_report, ReportOptions};
pub use run::{
    cmd_run, IncompleteTask, OutcomeIndexEntry, OutcomeLine, RunManifest, RunOptions, SessionLine, MANIFEST_FILE,
    OUTCOMES_FILE, SESSIONS_FILE,
};

pub const TASK_SCHEMA: &str = "solcomplete.task/v1";
pub const BUILD_STATS_SCHEMA: &str = "solcomplete.build-stats/v1";
pub const SESSION_SCHEMA: &str = "solcomplete.session/v1";
pub const OUTCOME_SCHEMA: &str = "solcomplete.outcome/v1";
pub const MANIFEST_SCHEMA: &str = "solcomplete.manifest/v1";
pub const POINTS_SCHEMA: &str = "solcomplete.points/v1";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error("{0}")]
    Infra(String),
    #[error("run aborted after writing {0} sessions")]
    Aborted(usize),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 for bad configuration or arguments, 3 for infrastructure failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Metrics(_) => 2,
            _ => 3,
        }
    }
}

/// One line of a task file. The full source travels with the task so runs
/// never depend on the original source tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub schema: String,
    pub id: String,
    pub source_path: String,
    pub name: String,
    #[serde(default)]
    pub contract: Option<String>,
    pub comment: String,
    pub signature: String,
    pub body: String,
    pub span: (usize, usize),
    /// Free-text domain tag, passed through untouched.
    #[serde(default)]
    pub contract_type: Option<String>,
    pub source: String,
}

impl TaskRecord {
    pub fn new(record: FunctionRecord, source: &str) -> Self {
        TaskRecord {
            schema: TASK_SCHEMA.into(),
            id: record.task_id(),
            source_path: record.source_id,
            name: record.name,
            contract: record.contract,
            comment: record.comment,
            signature: record.signature,
            body: record.body,
            span: record.span,
            contract_type: None,
            source: source.into(),
        }
    }

    pub fn record(&self) -> FunctionRecord {
        FunctionRecord {
            source_id: self.source_path.clone(),
            name: self.name.clone(),
            contract: self.contract.clone(),
            comment: self.comment.clone(),
            signature: self.signature.clone(),
            body: self.body.clone(),
            span: self.span,
        }
    }

    pub fn source_file(&self) -> Result<SourceFile, HarnessError> {
        SourceFile::new(self.source_path.clone(), self.source.clone())
            .map_err(|e| HarnessError::Config(format!("task {}: {e}", self.id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub schema: String,
    pub files: usize,
    pub malformed: Vec<String>,
    pub report: FilterReport,
}

/// Loads and checks a task file: ids must be unique.
pub fn load_tasks(path: &Path) -> Result<Vec<TaskRecord>, HarnessError> {
    let read: JsonlRead<TaskRecord> = read_jsonl(path)?;
    if read.torn {
        return Err(HarnessError::Corrupt {
            path: path.display().to_string(),
            line: read.items.len() + 1,
            message: "unterminated final line".into(),
        });
    }
    let mut seen = std::collections::HashSet::new();
    for t in &read.items {
        if t.schema != TASK_SCHEMA {
            return Err(HarnessError::Config(format!("task {}: unknown schema {}", t.id, t.schema)));
        }
        if !seen.insert(t.id.as_str()) {
            return Err(HarnessError::Config(format!("duplicate task id {}", t.id)));
        }
    }
    Ok(read.items)
}

fn sol_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, HarnessError> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| HarnessError::Infra(format!("{}: {e}", dir.display())))?;
        let p = entry.path();
        if entry.file_type().is_file() && p.extension().is_some_and(|e| e == "sol") {
            let rel = p.strip_prefix(dir).unwrap_or(p);
            let id = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.push((id, p.to_path_buf()));
        }
    }
    out.sort();
    Ok(out)
}

/// Default location of the stats file written next to a task file.
pub fn stats_path_for(task_file: &Path) -> PathBuf {
    let mut s = task_file.as_os_str().to_owned();
    s.push(".stats.json");
    PathBuf::from(s)
}

/// Runs the corpus pipeline over every `.sol` file under `src_dir` and writes
/// the task file plus `<task_file>.stats.json`.
pub fn cmd_build(src_dir: &Path, task_file: &Path, cfg: &FilterConfig) -> Result<BuildStats, HarnessError> {
    if !src_dir.is_dir() {
        return Err(HarnessError::Config(format!("{} is not a directory", src_dir.display())));
    }
    let mut files = Vec::new();
    for (id, path) in sol_files(src_dir)? {
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        files.push(SourceFile::new(id, text).map_err(|e| HarnessError::Config(e.to_string()))?);
    }
    let built = build_corpus(&files, cfg);
    let mut out = String::new();
    for rec in built.records {
        let src = files
            .iter()
            .find(|f| f.path == rec.source_id)
            .map(|f| f.text.as_str())
            .unwrap_or_default();
        out.push_str(&serde_json::to_string(&TaskRecord::new(rec, src)).expect("task serializes"));
        out.push('\n');
    }
    write_atomic(task_file, out.as_bytes())?;
    let stats = BuildStats {
        schema: BUILD_STATS_SCHEMA.into(),
        files: files.len(),
        malformed: built.malformed.iter().map(|e| e.to_string()).collect(),
        report: built.report,
    };
    let json = serde_json::to_string_pretty(&stats).expect("stats serialize");
    write_atomic(&stats_path_for(task_file), format!("{json}\n").as_bytes())?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dir_gives_empty_task_file() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        fs::create_dir(&src).unwrap();
        let out = dir.path().join("tasks.jsonl");
        let stats = cmd_build(&src, &out, &FilterConfig::default()).unwrap();
        assert_eq!(stats.report, FilterReport::default());
        assert_eq!(fs::read_to_string(&out).unwrap(), "");
        assert!(load_tasks(&out).unwrap().is_empty());
        assert!(stats_path_for(&out).exists());
    }

    #[test]
    fn uncommented_functions_are_all_excluded() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        fs::create_dir_all(src.join("nested")).unwrap();
        let text = "contract A {\n    function f() public pure returns (uint) { return 1; }\n    function g() public pure returns (uint) { return 2; }\n}\n";
        fs::write(src.join("nested/a.sol"), text).unwrap();
        fs::write(src.join("notes.txt"), "ignored").unwrap();
        let out = dir.path().join("tasks.jsonl");
        let stats = cmd_build(&src, &out, &FilterConfig::default()).unwrap();
        assert_eq!(stats.files, 1);
        assert_eq!(stats.report.total_extracted, 2);
        assert_eq!(stats.report.excluded_no_comment, 2);
        assert_eq!(stats.report.retained, 0);
    }

    #[test]
    fn tasks_round_trip_with_relative_ids() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        fs::create_dir_all(src.join("sub")).unwrap();
        let text = "contract A {\n    /// one\n    function f() public pure returns (uint) { return 1; }\n}\n";
        fs::write(src.join("sub/a.sol"), text).unwrap();
        let out = dir.path().join("tasks.jsonl");
        cmd_build(&src, &out, &FilterConfig::default()).unwrap();
        let tasks = load_tasks(&out).unwrap();
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].id, "sub/a.sol:2:f");
        assert_eq!(tasks[0].source, text);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("tasks.jsonl");
        let src = "contract A {\n    /// one\n    function f() public pure returns (uint) { return 1; }\n}\n";
        let rec = crate::corpus::extract_functions(&SourceFile::new("a.sol", src).unwrap()).unwrap().remove(0);
        let line = serde_json::to_string(&TaskRecord::new(rec, src)).unwrap();
        fs::write(&out, format!("{line}\n{line}\n")).unwrap();
        assert!(matches!(load_tasks(&out), Err(HarnessError::Config(_))));
    }
}
