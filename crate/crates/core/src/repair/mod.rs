//! Completion and the retrieval-augmented repair loop: complete, verify,
//! retrieve from the context using executor feedback, repair, verify again.

mod client;
mod prompt;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{build_context, preceding_text, ContextError, TokenCounter};
use crate::corpus::{inject_verification_statement, CorpusError, FunctionRecord, SourceFile};
use crate::executor::{
    build_query, substitute_function, Diagnostic, ExecutionVerdict, ExecutorBackend, ExecutorError, VerdictStatus,
};
use crate::retrieval::{
    retrieve, EmbeddingProvider, Query, RetrievalConfig, RetrievalError, RetrievalScope, RetrievedSnippet,
};

pub use client::{
    prompt_sha256, ChatConfig, ClientError, Completion, CompletionRequest, HttpChatClient, ModelClient, RateLimiter,
    ScriptedClient, ScriptedFixture, ScriptedReply, ScriptedStep, Stage, Usage,
};
pub use prompt::{
    all_templates, completion_prompt, explanation_prompt, extract_completion_body, render, repair_prompt, snippet_section,
    RepairInput, TemplateError, TEMPLATE_VERSION,
};

pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Error)]
pub enum RepairError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairStrategy {
    #[default]
    SelfEdit,
    SelfDebug,
    SelfRefine,
    SelfRepair,
}

impl RepairStrategy {
    pub const ALL: [RepairStrategy; 4] = [
        RepairStrategy::SelfEdit,
        RepairStrategy::SelfDebug,
        RepairStrategy::SelfRefine,
        RepairStrategy::SelfRepair,
    ];

    pub fn uses_executor_feedback(self) -> bool {
        self != RepairStrategy::SelfRefine
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RepairStrategy::SelfEdit => "self_edit",
            RepairStrategy::SelfDebug => "self_debug",
            RepairStrategy::SelfRefine => "self_refine",
            RepairStrategy::SelfRepair => "self_repair",
        }
    }
}

impl std::str::FromStr for RepairStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown repair strategy {s:?}"))
    }
}

/// Everything a session needs about one benchmark function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionTask {
    pub task_id: String,
    pub record: FunctionRecord,
    /// Token-budgeted window shown in the prompt.
    pub context: String,
    /// 1-based source line of the window's first line.
    pub context_first_line: usize,
    /// All code before the target function.
    pub preceding: String,
    /// Source with the verification statement in the target body.
    pub oracle_source: String,
}

impl CompletionTask {
    pub fn new(
        file: &SourceFile,
        record: &FunctionRecord,
        budget: i64,
        counter: &dyn TokenCounter,
    ) -> Result<Self, RepairError> {
        let window = build_context(file, record, budget, counter)?;
        let injected = inject_verification_statement(record)?;
        Ok(CompletionTask {
            task_id: record.task_id(),
            record: record.clone(),
            context: window.text,
            context_first_line: window.first_line,
            preceding: preceding_text(file, record)?.to_string(),
            oracle_source: substitute_function(&file.text, record, &injected.body)?,
        })
    }

    /// Lines the retriever searches and the source line of the first one.
    pub fn retrieval_lines(&self, scope: RetrievalScope) -> (Vec<&str>, usize) {
        match scope {
            RetrievalScope::Preceding => (self.preceding.lines().collect(), 1),
            RetrievalScope::Window => (self.context.lines().collect(), self.context_first_line),
        }
    }
}

/// The `repair.*` configuration block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RarConfig {
    pub strategy: RepairStrategy,
    /// 0 = completion only.
    pub max_rounds: usize,
    pub max_tokens: u32,
    /// None disables retrieval (plain repair).
    pub retrieval: Option<RetrievalConfig>,
}

impl Default for RarConfig {
    fn default() -> Self {
        RarConfig {
            strategy: RepairStrategy::SelfEdit,
            max_rounds: 1,
            max_tokens: DEFAULT_MAX_TOKENS,
            retrieval: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub prompt: String,
    pub text: String,
    pub usage: Usage,
}

/// A model call and the body parsed from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub prompt: String,
    pub completion: String,
    pub body: Option<String>,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    /// 0 for the initial completion.
    pub round: usize,
    pub prompt: String,
    pub completion: String,
    #[serde(default)]
    pub body: Option<String>,
    pub verdict: ExecutionVerdict,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub queries: Vec<Query>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snippets: Vec<RetrievedSnippet>,
    pub usage: Usage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<Explanation>,
}

impl Attempt {
    fn stage(&self) -> Stage {
        if self.round == 0 {
            Stage::Completion
        } else {
            Stage::Repair
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairSession {
    pub task_id: String,
    pub sample: usize,
    pub strategy: RepairStrategy,
    pub max_rounds: usize,
    pub attempts: Vec<Attempt>,
    pub final_status: VerdictStatus,
}

impl RepairSession {
    pub fn usage_by_stage(&self) -> BTreeMap<Stage, Usage> {
        let mut out = BTreeMap::new();
        for a in &self.attempts {
            *out.entry(a.stage()).or_default() += a.usage;
            if let Some(e) = &a.explanation {
                *out.entry(Stage::Explanation).or_default() += e.usage;
            }
        }
        out
    }

    pub fn total_usage(&self) -> Usage {
        self.usage_by_stage().into_values().sum()
    }

    pub fn final_verdict(&self) -> &ExecutionVerdict {
        &self.attempts.last().expect("sessions have at least one attempt").verdict
    }
}

fn call(
    client: &dyn ModelClient,
    task: &CompletionTask,
    stage: Stage,
    round: usize,
    sample: usize,
    prompt: &str,
    max_tokens: u32,
) -> Result<Completion, ClientError> {
    client.complete(&CompletionRequest {
        task_id: &task.task_id,
        stage,
        round,
        sample,
        prompt,
        max_tokens,
    })
}

fn generate(
    client: &dyn ModelClient,
    task: &CompletionTask,
    stage: Stage,
    round: usize,
    sample: usize,
    prompt: String,
    max_tokens: u32,
) -> Result<Generation, ClientError> {
    let c = call(client, task, stage, round, sample, &prompt, max_tokens)?;
    Ok(Generation {
        body: extract_completion_body(&c.text),
        prompt,
        completion: c.text,
        usage: c.usage,
    })
}

/// Step one: prompt with context, comment and signature; parse the body.
pub fn complete_function(
    task: &CompletionTask,
    client: &dyn ModelClient,
    max_tokens: u32,
    sample: usize,
) -> Result<Generation, RepairError> {
    let prompt = completion_prompt(task)?;
    Ok(generate(client, task, Stage::Completion, 0, sample, prompt, max_tokens)?)
}

/// Substitutes `body` into the oracle contract and runs the backend.
pub fn verify_body(
    task: &CompletionTask,
    body: Option<&str>,
    backend: &dyn ExecutorBackend,
) -> Result<ExecutionVerdict, RepairError> {
    let Some(body) = body else {
        return Ok(ExecutionVerdict::compile_error(
            vec![Diagnostic::other("ParserError: no function body found in model output")],
            "parser",
        ));
    };
    let completed = substitute_function(&task.oracle_source, &task.record, body)?;
    Ok(backend.verify(&task.oracle_source, &completed, &task.record))
}

fn shown_completion(task: &CompletionTask, g: &Generation) -> String {
    match &g.body {
        Some(b) => format!("{}{}", task.record.signature, b),
        None => g.completion.trim().to_string(),
    }
}

/// Runs completion plus up to `max_rounds` repair rounds for one sample.
pub fn run_rar(
    task: &CompletionTask,
    sample: usize,
    client: &dyn ModelClient,
    backend: &dyn ExecutorBackend,
    cfg: &RarConfig,
    provider: Option<&dyn EmbeddingProvider>,
) -> Result<RepairSession, RepairError> {
    let first = complete_function(task, client, cfg.max_tokens, sample)?;
    let verdict = verify_body(task, first.body.as_deref(), backend)?;
    let mut attempts = vec![Attempt {
        round: 0,
        prompt: first.prompt.clone(),
        completion: first.completion.clone(),
        body: first.body.clone(),
        verdict,
        queries: Vec::new(),
        snippets: Vec::new(),
        usage: first.usage,
        explanation: None,
    }];
    let mut last = first;
    for round in 1..=cfg.max_rounds {
        let prev = attempts.last().expect("non-empty");
        if matches!(prev.verdict.status, VerdictStatus::Pass | VerdictStatus::ExecutorUnavailable) {
            break;
        }
        let (queries, snippets, snippet_text) = match &cfg.retrieval {
            None => (Vec::new(), Vec::new(), String::new()),
            Some(rc) => {
                let queries = build_query(&prev.verdict, last.body.as_deref().unwrap_or(&last.completion));
                let (lines, first_line) = task.retrieval_lines(rc.scope);
                let snippets = retrieve(&queries, &lines, rc, provider)?;
                let text = snippet_section(&snippets, first_line)?;
                (queries, snippets, text)
            }
        };
        let completed = shown_completion(task, &last);
        let feedback = prev.verdict.feedback();
        let mut input = RepairInput {
            task,
            completed: &completed,
            feedback: &feedback,
            snippets: &snippet_text,
            explanation: None,
        };
        let explanation = if cfg.strategy == RepairStrategy::SelfDebug {
            let p = explanation_prompt(&input)?;
            let c = call(client, task, Stage::Explanation, round, sample, &p, cfg.max_tokens)?;
            Some(Explanation {
                prompt: p,
                text: c.text,
                usage: c.usage,
            })
        } else {
            None
        };
        input.explanation = explanation.as_ref().map(|e| e.text.as_str());
        let prompt = repair_prompt(cfg.strategy, &input)?;
        let g = generate(client, task, Stage::Repair, round, sample, prompt, cfg.max_tokens)?;
        let verdict = verify_body(task, g.body.as_deref(), backend)?;
        attempts.push(Attempt {
            round,
            prompt: g.prompt.clone(),
            completion: g.completion.clone(),
            body: g.body.clone(),
            verdict,
            queries,
            snippets,
            usage: g.usage,
            explanation,
        });
        last = g;
    }
    let final_status = attempts.last().expect("non-empty").verdict.status;
    Ok(RepairSession {
        task_id: task.task_id.clone(),
        sample,
        strategy: cfg.strategy,
        max_rounds: cfg.max_rounds,
        attempts,
        final_status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::ApproxByteCounter;
    use crate::corpus::extract_functions;
    use crate::executor::{Classifier, MockBackend, MockFixture, MockTask, MockVariant};
    use crate::retrieval::RetrievalMethod;

    const SRC: &str = "pragma solidity ^0.8.0;\n\ninterface IVault {\n    function deposit(uint256 amount) external;\n}\n\ncontract Saver {\n    IVault public vault;\n\n    /// Deposits `amount` into the vault.\n    function save(uint256 amount) public {\n        vault.deposit(amount);\n    }\n}\n";

    const WRONG: &str = "{\n        IVaultInterface(vault).deposit(amount);\n    }";
    const RIGHT: &str = "{\n        vault.deposit(amount);\n    }";

    fn task() -> CompletionTask {
        let f = SourceFile::new("saver.sol", SRC).unwrap();
        let r = extract_functions(&f).unwrap().into_iter().find(|r| r.name == "save").unwrap();
        CompletionTask::new(&f, &r, 0, &ApproxByteCounter).unwrap()
    }

    fn backend(t: &CompletionTask) -> MockBackend {
        let mut fx = MockFixture::default();
        fx.tasks.insert(
            t.task_id.clone(),
            MockTask {
                cases: vec![],
                variants: vec![MockVariant {
                    body: WRONG.into(),
                    compile_errors: vec!["DeclarationError: Undeclared identifier \"IVaultInterface\".".into()],
                    outputs: None,
                }],
            },
        );
        MockBackend::new(fx, Classifier::default())
    }

    fn client(t: &CompletionTask) -> ScriptedClient {
        let step = |stage, when: Option<&str>, text: &str| ScriptedStep {
            stage,
            when_prompt_contains: when.map(Into::into),
            round: None,
            sample: None,
            reply: ScriptedReply { text: text.into(), usage: None },
        };
        let mut fx = ScriptedFixture::default();
        fx.by_task.insert(
            t.task_id.clone(),
            vec![
                step(Stage::Completion, None, &format!("```solidity\n{WRONG}\n```")),
                step(Stage::Explanation, None, "Line 1 calls an interface that does not exist."),
                step(Stage::Repair, Some("interface IVault {"), RIGHT),
                step(Stage::Repair, None, WRONG),
            ],
        );
        ScriptedClient::new(fx)
    }

    fn lcs() -> Option<RetrievalConfig> {
        Some(RetrievalConfig::with_method(RetrievalMethod::Lcs))
    }

    #[test]
    fn oracle_source_carries_verification_statement() {
        let t = task();
        assert!(t.oracle_source.contains("{ uint256 this_is_a_test_variable;\n        vault.deposit(amount);"));
        assert_eq!(t.context, "");
    }

    #[test]
    fn no_repair_baseline() {
        let t = task();
        let cfg = RarConfig { max_rounds: 0, ..RarConfig::default() };
        let s = run_rar(&t, 0, &client(&t), &backend(&t), &cfg, None).unwrap();
        assert_eq!(s.attempts.len(), 1);
        assert_eq!(s.final_status, VerdictStatus::CompileError);
        assert_eq!(s.attempts[0].prompt, completion_prompt(&t).unwrap());
    }

    #[test]
    fn retrieval_enables_the_fix() {
        let t = task();
        let with = RarConfig { retrieval: lcs(), ..RarConfig::default() };
        let s = run_rar(&t, 0, &client(&t), &backend(&t), &with, None).unwrap();
        assert_eq!(s.attempts.len(), 2);
        assert_eq!(s.final_status, VerdictStatus::Pass);
        let repair = &s.attempts[1];
        assert!(repair.prompt.contains("line 3: interface IVault {"));
        assert!(repair.prompt.contains("Undeclared identifier \"IVaultInterface\""));
        assert_eq!(repair.queries, vec![Query::identifier("IVaultInterface").unwrap()]);

        let without = RarConfig::default();
        let s = run_rar(&t, 0, &client(&t), &backend(&t), &without, None).unwrap();
        assert_eq!(s.final_status, VerdictStatus::CompileError);
        assert!(!s.attempts[1].prompt.contains("Retrieved Code Snippets"));
    }

    #[test]
    fn strategies_shape_prompts() {
        let t = task();
        for strategy in RepairStrategy::ALL {
            let cfg = RarConfig { strategy, retrieval: lcs(), ..RarConfig::default() };
            let s = run_rar(&t, 0, &client(&t), &backend(&t), &cfg, None).unwrap();
            let p = &s.attempts[1].prompt;
            assert_eq!(p.contains("Undeclared identifier"), strategy.uses_executor_feedback(), "{strategy:?}");
            assert_eq!(s.attempts[1].explanation.is_some(), strategy == RepairStrategy::SelfDebug);
            if strategy == RepairStrategy::SelfDebug {
                assert!(p.contains("Line 1 calls an interface that does not exist."));
                assert!(s.usage_by_stage().contains_key(&Stage::Explanation));
            }
            let by_stage: Usage = s.usage_by_stage().into_values().sum();
            let direct: Usage = s.attempts.iter().map(|a| a.usage + a.explanation.as_ref().map_or(Usage::default(), |e| e.usage)).sum();
            assert_eq!(by_stage, direct);
        }
    }

    #[test]
    fn missing_script_is_an_error() {
        let t = task();
        let c = ScriptedClient::new(ScriptedFixture::default());
        assert!(matches!(
            run_rar(&t, 0, &c, &backend(&t), &RarConfig::default(), None),
            Err(RepairError::Client(ClientError::NoScript { .. }))
        ));
    }

    #[test]
    fn unparseable_output_is_a_compile_error() {
        let t = task();
        let v = verify_body(&t, None, &backend(&t)).unwrap();
        assert_eq!(v.status, VerdictStatus::CompileError);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in RepairStrategy::ALL {
            assert_eq!(s.as_str().parse::<RepairStrategy>().unwrap(), s);
        }
        assert_eq!("self-debug".parse::<RepairStrategy>().unwrap(), RepairStrategy::SelfDebug);
    }
}
