use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{compilation_at_1, pass_at_k, pearson, round_half_even, CostLedger, MetricsError, TaskOutcome};

pub const REPORT_SCHEMA: &str = "solcomplete.report/v1";

/// One run's aggregated inputs. `label` picks the table row and `budget` the
/// column group.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub label: String,
    pub budget: i64,
    pub outcomes: Vec<TaskOutcome>,
    pub cost: CostLedger,
    pub bleu: Option<f64>,
    pub crystal_bleu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub budget: i64,
    pub tasks: usize,
    pub scored_tasks: usize,
    pub unavailable_samples: u64,
    /// k -> percentage, rounded to 2 decimals.
    pub pass_at_k: BTreeMap<u64, f64>,
    pub compilation_at_1: f64,
    pub bleu: Option<f64>,
    pub crystal_bleu: Option<f64>,
    pub cost: CostLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPoint {
    pub label: String,
    pub budget: i64,
    pub p_at_1: f64,
    pub cost_usd: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub bleu_vs_p_at_1: Option<f64>,
    pub crystal_bleu_vs_p_at_1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub k_values: Vec<u64>,
    pub rows: Vec<ReportRow>,
    pub points: Vec<CostPoint>,
    pub correlations: Correlations,
}

fn sort_points(points: &mut [CostPoint]) {
    points.sort_by(|a, b| {
        a.cost_usd
            .total_cmp(&b.cost_usd)
            .then_with(|| a.label.cmp(&b.label))
            .then_with(|| a.budget.cmp(&b.budget))
    });
}

/// Concatenates point series and orders them by cost.
pub fn merge_points(series: &[&[CostPoint]]) -> Vec<CostPoint> {
    let mut all: Vec<CostPoint> = series.iter().flat_map(|s| s.iter().cloned()).collect();
    sort_points(&mut all);
    all
}

fn correlation(rows: &[ReportRow], pick: fn(&ReportRow) -> Option<f64>) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| Some((pick(r)?, *r.pass_at_k.get(&1)?)))
        .unzip();
    pearson(&xs, &ys).ok().map(|r| round_half_even(r, 4))
}

pub fn build_report(runs: &[RunSummary], k_values: &[u64]) -> Result<Report, MetricsError> {
    let mut ks: Vec<u64> = k_values.to_vec();
    if !ks.contains(&1) {
        ks.push(1);
    }
    ks.sort_unstable();
    ks.dedup();
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let mut pass = BTreeMap::new();
        for &k in &ks {
            pass.insert(k, pass_at_k(&run.outcomes, k)?.rounded());
        }
        rows.push(ReportRow {
            label: run.label.clone(),
            budget: run.budget,
            tasks: run.outcomes.len(),
            scored_tasks: run.outcomes.iter().filter(|o| o.n > 0).count(),
            unavailable_samples: run.outcomes.iter().map(|o| o.unavailable).sum(),
            pass_at_k: pass,
            compilation_at_1: compilation_at_1(&run.outcomes)?.rounded(),
            bleu: run.bleu.map(|b| round_half_even(b, 2)),
            crystal_bleu: run.crystal_bleu.map(|b| round_half_even(b, 2)),
            cost: run.cost.clone(),
        });
    }
    rows.sort_by(|a, b| a.label.cmp(&b.label).then(a.budget.cmp(&b.budget)));
    let mut points: Vec<CostPoint> = rows
        .iter()
        .map(|r| CostPoint {
            label: r.label.clone(),
            budget: r.budget,
            p_at_1: r.pass_at_k[&1],
            cost_usd: r.cost.total_usd,
        })
        .collect();
    sort_points(&mut points);
    let correlations = Correlations {
        bleu_vs_p_at_1: correlation(&rows, |r| r.bleu),
        crystal_bleu_vs_p_at_1: correlation(&rows, |r| r.crystal_bleu),
    };
    Ok(Report {
        schema: REPORT_SCHEMA.to_string(),
        k_values: ks,
        rows,
        points,
        correlations,
    })
}

/// Aligned text table: one row per label, P@1/C@1 per context budget, then
/// the averages over budgets.
pub fn render_table(report: &Report) -> String {
    let budgets: BTreeSet<i64> = report.rows.iter().map(|r| r.budget).collect();
    let labels: BTreeSet<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();

    let mut header = vec!["Model".to_string()];
    for b in &budgets {
        header.push(format!("{b} P@1"));
        header.push(format!("{b} C@1"));
    }
    header.push("Avg P@1".into());
    header.push("Avg C@1".into());

    let mut lines = vec![header];
    for label in &labels {
        let mut cells = vec![label.to_string()];
        let (mut sp, mut sc, mut m) = (0.0, 0.0, 0usize);
        for b in &budgets {
            match report.rows.iter().find(|r| r.label == *label && r.budget == *b) {
                Some(r) => {
                    let p = r.pass_at_k[&1];
                    cells.push(format!("{p:.2}"));
                    cells.push(format!("{:.2}", r.compilation_at_1));
                    sp += p;
                    sc += r.compilation_at_1;
                    m += 1;
                }
                None => {
                    cells.push("-".into());
                    cells.push("-".into());
                }
            }
        }
        let avg = |s: f64| format!("{:.2}", round_half_even(s / m as f64, 2));
        cells.push(avg(sp));
        cells.push(avg(sc));
        lines.push(cells);
    }

    let cols = lines[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|i| lines.iter().map(|l| l[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (n, l) in lines.iter().enumerate() {
        let row: Vec<String> = l
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        let _ = writeln!(out, "{}", row.join("  ").trim_end());
        if n == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (cols - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}
