use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use solcomplete::corpus::FilterConfig;
use solcomplete::executor::{backend_from_config, BackendKind};
use solcomplete::harness::{self, HarnessError, ReportOptions, RunConfig, RunOptions};
use solcomplete::metrics::CostModel;
use solcomplete::repair::{verify_body, CompletionTask, RepairStrategy};
use solcomplete::retrieval::{RetrievalConfig, RetrievalMethod};

#[derive(Parser)]
#[command(name = "solcomplete", version, about = "Function-level Solidity completion with retrieval-augmented repair")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a task file from a directory of .sol files.
    Build {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON file with filter settings.
        #[arg(long)]
        filter_config: Option<PathBuf>,
    },
    /// Complete (and optionally repair) every task.
    Run(RunArgs),
    /// Compute metrics over one or more run directories.
    Report {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "k", value_delimiter = ',')]
        k_values: Vec<u64>,
        #[arg(long)]
        price_prompt: Option<f64>,
        #[arg(long)]
        price_completion: Option<f64>,
        #[arg(long)]
        trivial_k: Option<usize>,
    },
    /// Check one candidate body against its oracle.
    Verify {
        #[arg(long)]
        task_file: PathBuf,
        #[arg(long)]
        task_id: String,
        /// File holding the body, `-` for stdin.
        #[arg(long)]
        body: PathBuf,
        #[arg(long)]
        mock_executor: Option<PathBuf>,
        #[arg(long)]
        solc: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task_file: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    budget: Option<i64>,
    #[arg(long)]
    counter: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    requests_per_minute: Option<u32>,
    #[arg(long)]
    mock_client: Option<PathBuf>,
    #[arg(long)]
    mock_executor: Option<PathBuf>,
    #[arg(long)]
    solc: Option<String>,
    /// lcs, bm25, tfidf, jaccard, dense or none.
    #[arg(long)]
    retrieval: Option<String>,
    #[arg(long)]
    max_snippets: Option<usize>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long = "k", value_delimiter = ',')]
    k_values: Vec<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    price_prompt: Option<f64>,
    #[arg(long)]
    price_completion: Option<f64>,
    /// Stop after writing this many sessions (crash simulation).
    #[arg(long, hide = true)]
    abort_after: Option<usize>,
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

impl RunArgs {
    fn into_config(self) -> Result<(RunConfig, RunOptions), HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = self.task_file {
            cfg.task_file = p;
        }
        if let Some(p) = self.out_dir {
            cfg.out_dir = p;
        }
        if self.label.is_some() {
            cfg.label = self.label;
        }
        if let Some(b) = self.budget {
            cfg.context.budget_tokens = b;
        }
        if let Some(c) = self.counter {
            cfg.context.counter = c;
        }
        if let Some(m) = self.model {
            cfg.model.model = m;
        }
        if let Some(e) = self.endpoint {
            cfg.model.endpoint = e;
        }
        if let Some(e) = self.api_key_env {
            cfg.model.api_key_env = e;
        }
        if let Some(r) = self.requests_per_minute {
            cfg.model.requests_per_minute = r;
        }
        if let Some(p) = self.mock_client {
            cfg.mock_client = Some(p);
        }
        if let Some(p) = self.mock_executor {
            cfg.executor.backend = BackendKind::Mock;
            cfg.executor.mock_fixture = Some(p.display().to_string());
        }
        if let Some(s) = self.solc {
            cfg.executor.solc_path = s;
            if cfg.executor.backend != BackendKind::Mock {
                cfg.executor.backend = BackendKind::Solc;
            }
        }
        match self.retrieval.as_deref() {
            None => {}
            Some("none") => cfg.repair.retrieval = None,
            Some(m) => {
                let method: RetrievalMethod = m.parse().map_err(config_err)?;
                let base = cfg.repair.retrieval.take().unwrap_or_default();
                cfg.repair.retrieval = Some(RetrievalConfig { method, ..base });
            }
        }
        if let Some(n) = self.max_snippets {
            let r = cfg.repair.retrieval.get_or_insert_with(RetrievalConfig::default);
            r.max_snippets = n;
        }
        if let Some(s) = self.strategy {
            cfg.repair.strategy = s.parse::<RepairStrategy>().map_err(config_err)?;
        }
        if let Some(r) = self.max_rounds {
            cfg.repair.max_rounds = r;
        }
        if let Some(s) = self.samples {
            cfg.samples = s;
        }
        if !self.k_values.is_empty() {
            cfg.k_values = self.k_values;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.price_prompt {
            cfg.cost.prompt_per_million = p;
        }
        if let Some(p) = self.price_completion {
            cfg.cost.completion_per_million = p;
        }
        Ok((cfg, RunOptions { abort_after: self.abort_after }))
    }
}

fn run(cmd: Cmd) -> Result<ExitCode, HarnessError> {
    match cmd {
        Cmd::Build { src, out, filter_config } => {
            let cfg = match filter_config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                    serde_json::from_str::<FilterConfig>(&text).map_err(config_err)?
                }
                None => FilterConfig::default(),
            };
            let stats = harness::cmd_build(&src, &out, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&stats.report).expect("report serializes"));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run(args) => {
            let (cfg, opts) = args.into_config()?;
            let manifest = harness::cmd_run(&cfg, &opts)?;
            let c: u64 = manifest.outcomes.iter().map(|o| u64::from(o.c > 0)).sum();
            println!(
                "{}: {} tasks, {} sessions, {} with a passing sample, {} incomplete",
                manifest.label,
                manifest.tasks_total,
                manifest.sessions_total,
                c,
                manifest.incomplete.len()
            );
            Ok(if manifest.complete { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
        Cmd::Report {
            runs,
            out,
            k_values,
            price_prompt,
            price_completion,
            trivial_k,
        } => {
            let cost = (price_prompt.is_some() || price_completion.is_some()).then(|| {
                let d = CostModel::default();
                CostModel {
                    prompt_per_million: price_prompt.unwrap_or(d.prompt_per_million),
                    completion_per_million: price_completion.unwrap_or(d.completion_per_million),
                }
            });
            let opts = ReportOptions {
                k_values,
                cost,
                trivial_k,
            };
            let report = harness::cmd_report(&runs, &opts, &out)?;
            print!("{}", solcomplete::metrics::render_table(&report));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Verify {
            task_file,
            task_id,
            body,
            mock_executor,
            solc,
        } => {
            let tasks = harness::load_tasks(&task_file)?;
            let task = tasks
                .iter()
                .find(|t| t.id == task_id)
                .ok_or_else(|| config_err(format!("no task {task_id} in {}", task_file.display())))?;
            let text = if body == Path::new("-") {
                std::io::read_to_string(std::io::stdin()).map_err(|e| HarnessError::Infra(e.to_string()))?
            } else {
                std::fs::read_to_string(&body).map_err(|e| config_err(format!("{}: {e}", body.display())))?
            };
            let mut exec = solcomplete::executor::ExecutorConfig::default();
            match (mock_executor, solc) {
                (Some(p), _) => exec.mock_fixture = Some(p.display().to_string()),
                (None, s) => {
                    exec.backend = BackendKind::Solc;
                    exec.solc_path = s.unwrap_or_else(|| "solc".into());
                }
            }
            let backend = backend_from_config(&exec, Path::new("")).map_err(config_err)?;
            let file = task.source_file()?;
            let ct = CompletionTask::new(&file, &task.record(), 0, &solcomplete::context::ApproxByteCounter)
                .map_err(config_err)?;
            let verdict = verify_body(&ct, Some(text.trim()), backend.as_ref()).map_err(config_err)?;
            println!("{}", serde_json::to_string_pretty(&verdict).expect("verdict serializes"));
            Ok(if verdict.is_pass() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.cmd).context("solcomplete") {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<HarnessError>().map_or(3, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
