//! pass@k, compilation@1, BLEU/CrystalBLEU, Pearson correlation and cost.

mod bleu;
mod report;

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::VerdictStatus;
use crate::repair::{RepairSession, Stage, Usage};

pub use bleu::{
    bleu, corpus_bleu, corpus_crystal_bleu, crystal_bleu, trivially_shared_ngrams, Ngram, BLEU_EPSILON,
    DEFAULT_TRIVIAL_K,
};
pub use report::{build_report, merge_points, render_table, CostPoint, Correlations, Report, ReportRow, RunSummary, REPORT_SCHEMA};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("k = {k} exceeds n = {n} for task {task_id}")]
    KExceedsN { task_id: String, k: u64, n: u64 },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("no scorable tasks (all samples unavailable or no outcomes)")]
    NoTasks,
    #[error("inconsistent outcome for task {0}: need c <= c_compile <= n")]
    InvalidOutcome(String),
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("correlation undefined: a series has zero variance")]
    ZeroVariance,
    #[error("prices must be finite and non-negative")]
    InvalidPrice,
}

/// Per-task sample counts. Samples whose executor was unavailable are not
/// part of `n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub n: u64,
    pub c: u64,
    pub c_compile: u64,
    #[serde(default)]
    pub unavailable: u64,
    #[serde(default)]
    pub usage: Usage,
}

impl TaskOutcome {
    pub fn new(task_id: impl Into<String>, n: u64, c: u64, c_compile: u64) -> Self {
        TaskOutcome {
            task_id: task_id.into(),
            n,
            c,
            c_compile,
            unavailable: 0,
            usage: Usage::default(),
        }
    }

    /// Counts the final status of each session (one per sample).
    pub fn from_sessions(task_id: &str, sessions: &[RepairSession]) -> Self {
        let mut o = TaskOutcome::new(task_id, 0, 0, 0);
        for s in sessions {
            o.usage += s.total_usage();
            match s.final_status {
                VerdictStatus::ExecutorUnavailable => o.unavailable += 1,
                st => {
                    o.n += 1;
                    o.c += (st == VerdictStatus::Pass) as u64;
                    o.c_compile += st.compiles() as u64;
                }
            }
        }
        o
    }

    pub fn is_consistent(&self) -> bool {
        self.c <= self.c_compile && self.c_compile <= self.n
    }
}

/// A percentage kept unrounded; `Display` rounds half-even to 2 decimals.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Percent(pub f64);

impl Percent {
    pub fn from_fraction(f: f64) -> Self {
        Percent(f * 100.0)
    }

    pub fn fraction(self) -> f64 {
        self.0 / 100.0
    }

    pub fn rounded(self) -> f64 {
        round_half_even(self.0, 2)
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.rounded())
    }
}

pub fn round_half_even(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale).round_ties_even() / scale
}

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

fn ratio(num: &BigUint, den: &BigUint) -> f64 {
    // scale down together so both fit an f64 without overflow
    let shift = den.bits().saturating_sub(1000);
    let (n, d) = (num >> shift, den >> shift);
    n.to_f64().unwrap_or(f64::INFINITY) / d.to_f64().unwrap_or(f64::INFINITY)
}

/// Unbiased pass@k for one task as a fraction: 1 - C(n-c, k) / C(n, k).
pub fn pass_at_k_task(n: u64, c: u64, k: u64) -> f64 {
    if n - c < k {
        return 1.0;
    }
    let den = binomial(n, k);
    let num = &den - binomial(n - c, k);
    ratio(&num, &den)
}

fn mean_over<F: Fn(&TaskOutcome) -> u64>(outcomes: &[TaskOutcome], k: u64, correct: F) -> Result<Percent, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidK);
    }
    let mut sum = 0.0;
    let mut tasks = 0usize;
    for o in outcomes {
        if !o.is_consistent() {
            return Err(MetricsError::InvalidOutcome(o.task_id.clone()));
        }
        if o.n == 0 {
            continue;
        }
        if k > o.n {
            return Err(MetricsError::KExceedsN {
                task_id: o.task_id.clone(),
                k,
                n: o.n,
            });
        }
        sum += pass_at_k_task(o.n, correct(o), k);
        tasks += 1;
    }
    if tasks == 0 {
        return Err(MetricsError::NoTasks);
    }
    Ok(Percent::from_fraction(sum / tasks as f64))
}

/// Mean pass@k over tasks; tasks with no usable sample are skipped.
pub fn pass_at_k(outcomes: &[TaskOutcome], k: u64) -> Result<Percent, MetricsError> {
    mean_over(outcomes, k, |o| o.c)
}

pub fn compilation_at_1(outcomes: &[TaskOutcome]) -> Result<Percent, MetricsError> {
    mean_over(outcomes, 1, |o| o.c_compile)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricsError::TooFewPoints(xs.len()));
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// USD per million tokens. Defaults are GPT-4o-mini list prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub prompt_per_million: f64,
    pub completion_per_million: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            prompt_per_million: 0.15,
            completion_per_million: 0.6,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let ok = |p: f64| p.is_finite() && p >= 0.0;
        if ok(self.prompt_per_million) && ok(self.completion_per_million) {
            Ok(())
        } else {
            Err(MetricsError::InvalidPrice)
        }
    }

    pub fn usd(&self, usage: Usage) -> f64 {
        usage.prompt_tokens as f64 * self.prompt_per_million / 1e6
            + usage.completion_tokens as f64 * self.completion_per_million / 1e6
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub usage: Usage,
    pub usd: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub by_stage: BTreeMap<Stage, StageCost>,
    pub usage: Usage,
    pub total_usd: f64,
}

impl CostLedger {
    pub fn add_usage(&mut self, stage: Stage, usage: Usage, model: &CostModel) {
        let usd = model.usd(usage);
        let e = self.by_stage.entry(stage).or_default();
        e.usage += usage;
        e.usd += usd;
        self.usage += usage;
        self.total_usd += usd;
    }

    pub fn add_session(&mut self, session: &RepairSession, model: &CostModel) {
        for (stage, usage) in session.usage_by_stage() {
            self.add_usage(stage, usage, model);
        }
    }

    pub fn merge(&mut self, other: &CostLedger) {
        for (stage, c) in &other.by_stage {
            let e = self.by_stage.entry(*stage).or_default();
            e.usage += c.usage;
            e.usd += c.usd;
        }
        self.usage += other.usage;
        self.total_usd += other.total_usd;
    }
}

pub fn cost_of(sessions: &[RepairSession], model: &CostModel) -> CostLedger {
    let mut ledger = CostLedger::default();
    for s in sessions {
        ledger.add_session(s, model);
    }
    ledger
}
