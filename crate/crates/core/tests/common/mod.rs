#![allow(dead_code)]

pub mod criteria;
pub mod lcs;

use std::path::{Path, PathBuf};

use solcomplete::corpus::FilterConfig;
use solcomplete::executor::{BackendKind, ExecutorConfig};
use solcomplete::harness::{cmd_build, RunConfig};
use solcomplete::repair::{RarConfig, RepairStrategy};
use solcomplete::retrieval::{RetrievalConfig, RetrievalMethod};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn rar_dir() -> PathBuf {
    fixtures().join("rar50")
}

/// Builds the 50-task file into `dir`.
pub fn build_rar_tasks(dir: &Path) -> PathBuf {
    let out = dir.join("tasks.jsonl");
    let stats = cmd_build(&rar_dir().join("src"), &out, &FilterConfig::default()).expect("rar fixture builds");
    assert_eq!(stats.report.retained, 50, "rar fixture should yield 50 tasks");
    out
}

pub fn rar_config(task_file: &Path, out_dir: &Path, max_rounds: usize, retrieval: Option<RetrievalMethod>) -> RunConfig {
    let mut cfg = RunConfig {
        task_file: task_file.to_path_buf(),
        out_dir: out_dir.to_path_buf(),
        mock_client: Some(rar_dir().join("mock_client.json")),
        executor: ExecutorConfig {
            backend: BackendKind::Mock,
            mock_fixture: Some(rar_dir().join("mock_executor.json").display().to_string()),
            ..Default::default()
        },
        repair: RarConfig {
            strategy: RepairStrategy::SelfEdit,
            max_rounds,
            retrieval: retrieval.map(RetrievalConfig::with_method),
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.context.budget_tokens = 0;
    cfg
}

pub fn design() -> serde_json::Value {
    let text = std::fs::read_to_string(rar_dir().join("design.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}
