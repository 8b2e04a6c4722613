//! Adapter for an external differential fuzzer.
//!
//! The command receives the oracle and completed contracts as files and must
//! exit with 0 (equivalent), 1 (behavioural mismatch), 2 (completed contract
//! does not compile); anything else means the tool itself failed. Stdout may
//! carry a JSON [`FuzzReport`] with details.

use std::process::Command;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::process::{run_with_timeout, ProcessError};
use super::{classify_error, locate_body, rebase_line, Diagnostic, ExecutionVerdict, ExecutorBackend};
use crate::corpus::FunctionRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub program: String,
    /// Arguments; `{oracle}`, `{completed}`, `{function}`, `{contract}` and
    /// `{seed}` are substituted.
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FuzzMismatch {
    #[serde(default)]
    pub function: Option<String>,
    pub input: String,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    #[serde(default)]
    pub mismatches: Vec<FuzzMismatch>,
    /// Compiler messages when exiting with 2.
    #[serde(default)]
    pub errors: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tool_version: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CommandFuzzer {
    cfg: FuzzConfig,
    timeout: Duration,
}

impl CommandFuzzer {
    pub fn new(cfg: FuzzConfig, timeout: Duration) -> Self {
        CommandFuzzer { cfg, timeout }
    }

    fn run(&self, oracle_source: &str, completed_source: &str, target: &FunctionRecord) -> Result<ExecutionVerdict, String> {
        let dir = tempfile::tempdir().map_err(|e| format!("cannot create work dir: {e}"))?;
        let oracle = dir.path().join("Oracle.sol");
        let completed = dir.path().join("Completed.sol");
        std::fs::write(&oracle, oracle_source).map_err(|e| e.to_string())?;
        std::fs::write(&completed, completed_source).map_err(|e| e.to_string())?;
        let seed = self.cfg.seed.to_string();
        let contract = target.contract.clone().unwrap_or_default();
        let mut cmd = Command::new(&self.cfg.program);
        for a in &self.cfg.args {
            cmd.arg(
                a.replace("{oracle}", &oracle.to_string_lossy())
                    .replace("{completed}", &completed.to_string_lossy())
                    .replace("{function}", &target.name)
                    .replace("{contract}", &contract)
                    .replace("{seed}", &seed),
            );
        }
        let out = run_with_timeout(cmd, None, self.timeout).map_err(|e| match e {
            ProcessError::Timeout(t) => format!("fuzzer timed out after {}s", t.as_secs_f64()),
            other => format!("fuzzer failed to run: {other}"),
        })?;
        let stdout = String::from_utf8_lossy(&out.stdout);
        let report: FuzzReport = if stdout.trim().is_empty() {
            FuzzReport::default()
        } else {
            serde_json::from_str(stdout.trim()).map_err(|e| format!("unreadable fuzzer report: {e}"))?
        };
        let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
        let mut v = match out.code {
            Some(0) => ExecutionVerdict::pass(self.name()),
            Some(1) => {
                let mut diags: Vec<Diagnostic> = report
                    .mismatches
                    .iter()
                    .map(|m| {
                        let f = m.function.as_deref().unwrap_or(&target.name);
                        Diagnostic::other(format!(
                            "{f}: on input {}: expected {}, got {}",
                            m.input, m.expected, m.actual
                        ))
                    })
                    .collect();
                if diags.is_empty() {
                    diags.push(Diagnostic::other(if stderr.is_empty() { "behavioural mismatch".into() } else { stderr }));
                }
                ExecutionVerdict::mismatch(diags, self.name())
            }
            Some(2) => {
                let body = locate_body(completed_source, target).ok();
                let diags = report
                    .errors
                    .iter()
                    .map(|m| {
                        let mut d = classify_error(m);
                        // reported lines refer to the completed file
                        d.line = match (body, d.line) {
                            (Some(b), Some(l)) => rebase_line(completed_source, b, l),
                            _ => None,
                        };
                        d
                    })
                    .collect();
                ExecutionVerdict::compile_error(diags, self.name())
            }
            other => return Err(format!("fuzzer exited with {other:?}: {stderr}")),
        };
        v.seed = Some(report.seed.unwrap_or(self.cfg.seed));
        v.tool_version = report.tool_version;
        Ok(v)
    }
}

impl ExecutorBackend for CommandFuzzer {
    fn name(&self) -> &str {
        "fuzz-command"
    }

    fn verify(&self, oracle_source: &str, completed_source: &str, target: &FunctionRecord) -> ExecutionVerdict {
        let started = Instant::now();
        let mut v = self
            .run(oracle_source, completed_source, target)
            .unwrap_or_else(|reason| ExecutionVerdict::unavailable(reason, self.name()));
        v.elapsed_ms = started.elapsed().as_millis() as u64;
        v
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use crate::corpus::{extract_functions, SourceFile};
    use crate::executor::{ErrorKind, VerdictStatus};

    const SRC: &str = "contract C {\n    /// f\n    function f(uint x) public pure returns (uint) {\n        return x;\n    }\n}\n";

    fn fuzzer(script: &str) -> CommandFuzzer {
        CommandFuzzer::new(
            FuzzConfig {
                program: "sh".into(),
                args: vec!["-c".into(), script.into(), "fuzz".into(), "{oracle}".into(), "{completed}".into(), "{seed}".into()],
                seed: 7,
            },
            Duration::from_secs(10),
        )
    }

    fn rec() -> FunctionRecord {
        extract_functions(&SourceFile::new("c.sol", SRC).unwrap()).unwrap().remove(0)
    }

    #[test]
    fn exit_codes_map_to_statuses() {
        let v = fuzzer("cmp -s \"$1\" \"$2\"").verify(SRC, SRC, &rec());
        assert_eq!(v.status, VerdictStatus::Pass);
        assert_eq!(v.seed, Some(7));

        let report = r#"{"mismatches":[{"input":"f(3)","expected":"3","actual":"4"}]}"#;
        let v = fuzzer(&format!("echo '{report}'; exit 1")).verify(SRC, SRC, &rec());
        assert_eq!(v.status, VerdictStatus::FunctionalMismatch);
        assert!(v.diagnostics[0].message.contains("on input f(3): expected 3, got 4"));

        let report = r#"{"errors":["DeclarationError: Undeclared identifier \"y\".\n --> Completed.sol:4:16:"]}"#;
        let v = fuzzer(&format!("printf '%s' '{report}'; exit 2")).verify(SRC, SRC, &rec());
        assert_eq!(v.status, VerdictStatus::CompileError);
        assert_eq!(v.diagnostics[0].kind, ErrorKind::UndeclaredIdentifier);
        assert_eq!(v.diagnostics[0].line, Some(2));

        let v = fuzzer("exit 9").verify(SRC, SRC, &rec());
        assert_eq!(v.status, VerdictStatus::ExecutorUnavailable);
    }

    #[test]
    fn seed_is_passed_through() {
        let v = fuzzer("test \"$3\" = 7").verify(SRC, SRC, &rec());
        assert_eq!(v.status, VerdictStatus::Pass);
    }

    #[test]
    fn timeout_is_unavailable() {
        let mut f = fuzzer("sleep 5");
        f.timeout = Duration::from_millis(100);
        let v = f.verify(SRC, SRC, &rec());
        assert_eq!(v.status, VerdictStatus::ExecutorUnavailable);
        assert!(v.diagnostics[0].message.contains("timed out"));
    }
}
