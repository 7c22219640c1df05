//! Per-step rows, their CSV form, and the aggregate tables derived from them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub function_id: usize,
    pub rep: usize,
    pub step: usize,
    pub algorithm: String,
    /// Query coordinates joined with `;`.
    pub x: String,
    pub y: Option<f64>,
    pub metric: Option<f64>,
    pub safe_set_size: usize,
    pub beta: Option<f64>,
    pub violation: bool,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub functions: usize,
    pub runs: usize,
    pub failed_runs: usize,
    pub not_started_pct: f64,
    pub stuck_pct: f64,
    /// Runs with at least one unsafe query.
    pub violation_pct: f64,
    pub worst_function_violation_pct: f64,
    pub total_violations: usize,
    /// Mean over functions of the per-function mean final metric.
    pub final_performance_mean_pct: f64,
    /// Population SD over functions of the per-function mean final metric.
    pub final_performance_sd_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricByStep {
    pub algorithm: String,
    pub step: usize,
    pub mean: f64,
    pub sd: f64,
}

struct RunView {
    failed: bool,
    violated: bool,
    violations: usize,
    not_started: bool,
    stuck: bool,
    metrics: Vec<Option<f64>>,
}

type RunKey = (String, usize, usize);

fn group_runs(rows: &[StepRow]) -> BTreeMap<RunKey, RunView> {
    let mut grouped: BTreeMap<RunKey, Vec<&StepRow>> = BTreeMap::new();
    for r in rows {
        grouped.entry((r.algorithm.clone(), r.function_id, r.rep)).or_default().push(r);
    }
    grouped
        .into_iter()
        .map(|(key, mut steps)| {
            steps.sort_by_key(|r| r.step);
            let failed = steps.iter().any(|r| r.status == "failed");
            let first = steps.first().map(|r| r.safe_set_size).unwrap_or(0);
            let violations = steps.iter().filter(|r| r.violation).count();
            let max_step = steps.last().map(|r| r.step).unwrap_or(0);
            let mut metrics = vec![None; max_step];
            for r in &steps {
                if r.step > 0 {
                    metrics[r.step - 1] = r.metric;
                }
            }
            let view = RunView {
                failed,
                violated: violations > 0,
                violations,
                not_started: steps.iter().all(|r| r.safe_set_size <= first),
                stuck: steps.iter().any(|r| r.status == "stuck"),
                metrics,
            };
            (key, view)
        })
        .collect()
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn final_metric(run: &RunView) -> Option<f64> {
    run.metrics.iter().rev().find_map(|m| *m)
}

/// One summary line per algorithm; independent of row order.
pub fn summarize(rows: &[StepRow]) -> Vec<Summary> {
    let runs = group_runs(rows);
    let mut by_alg: BTreeMap<&str, BTreeMap<usize, Vec<&RunView>>> = BTreeMap::new();
    for ((alg, f, _), view) in &runs {
        by_alg.entry(alg.as_str()).or_default().entry(*f).or_default().push(view);
    }
    by_alg
        .into_iter()
        .map(|(alg, functions)| {
            let all: Vec<&RunView> = functions.values().flatten().copied().collect();
            let ok: Vec<&RunView> = all.iter().copied().filter(|r| !r.failed).collect();
            let pct = |count: usize, total: usize| if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 };
            let worst = functions
                .values()
                .map(|runs| {
                    let ok: Vec<_> = runs.iter().filter(|r| !r.failed).collect();
                    pct(ok.iter().filter(|r| r.violated).count(), ok.len())
                })
                .fold(0.0, f64::max);
            let per_function: Vec<f64> = functions
                .values()
                .filter_map(|runs| {
                    let finals: Vec<f64> = runs.iter().filter(|r| !r.failed).filter_map(|r| final_metric(r)).collect();
                    (!finals.is_empty()).then(|| mean_sd(&finals).0)
                })
                .collect();
            let (mean, sd) = mean_sd(&per_function);
            Summary {
                algorithm: alg.to_string(),
                functions: functions.len(),
                runs: all.len(),
                failed_runs: all.len() - ok.len(),
                not_started_pct: pct(ok.iter().filter(|r| r.not_started).count(), ok.len()),
                stuck_pct: pct(ok.iter().filter(|r| r.stuck).count(), ok.len()),
                violation_pct: pct(ok.iter().filter(|r| r.violated).count(), ok.len()),
                worst_function_violation_pct: worst,
                total_violations: ok.iter().map(|r| r.violations).sum(),
                final_performance_mean_pct: 100.0 * mean,
                final_performance_sd_pct: 100.0 * sd,
            }
        })
        .collect()
}

/// Mean and SD over functions of the per-function mean metric at every step.
/// Runs that ended early carry their last metric forward.
pub fn metric_by_step(rows: &[StepRow]) -> Vec<MetricByStep> {
    let runs = group_runs(rows);
    let mut by_alg: BTreeMap<&str, BTreeMap<usize, Vec<&RunView>>> = BTreeMap::new();
    for ((alg, f, _), view) in &runs {
        if !view.failed {
            by_alg.entry(alg.as_str()).or_default().entry(*f).or_default().push(view);
        }
    }
    let mut out = Vec::new();
    for (alg, functions) in by_alg {
        let horizon = functions.values().flatten().map(|r| r.metrics.len()).max().unwrap_or(0);
        for step in 1..=horizon {
            let per_function: Vec<f64> = functions
                .values()
                .filter_map(|runs| {
                    let values: Vec<f64> = runs
                        .iter()
                        .filter_map(|r| r.metrics[..step.min(r.metrics.len())].iter().rev().find_map(|m| *m))
                        .collect();
                    (!values.is_empty()).then(|| mean_sd(&values).0)
                })
                .collect();
            let (mean, sd) = mean_sd(&per_function);
            out.push(MetricByStep {
                algorithm: alg.to_string(),
                step,
                mean,
                sd,
            });
        }
    }
    out
}

fn write_csv<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for item in items {
        w.serialize(item)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows<'a>(path: &Path, rows: impl IntoIterator<Item = &'a StepRow>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut any = false;
    for r in rows {
        w.serialize(r)?;
        any = true;
    }
    if !any {
        w.write_record([
            "function_id",
            "rep",
            "step",
            "algorithm",
            "x",
            "y",
            "metric",
            "safe_set_size",
            "beta",
            "violation",
            "status",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<StepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<StepRow>, _>>()?;
    Ok(rows)
}

pub fn write_summary(path: &Path, summary: &[Summary]) -> Result<()> {
    write_csv(path, summary)
}

pub fn write_metric_by_step(path: &Path, rows: &[MetricByStep]) -> Result<()> {
    write_csv(path, rows)
}

/// Fixed-width text rendering of the summary table.
pub fn format_summary(summary: &[Summary]) -> String {
    let mut out = format!(
        "{:<14} {:>5} {:>6} {:>6} {:>12} {:>8} {:>11} {:>10} {:>16}\n",
        "algorithm", "funcs", "runs", "failed", "not started%", "stuck%", "violation%", "worst fn%", "final perf%"
    );
    for s in summary {
        out.push_str(&format!(
            "{:<14} {:>5} {:>6} {:>6} {:>12.2} {:>8.2} {:>11.3} {:>10.3} {:>8.2} ± {:<6.2}\n",
            s.algorithm,
            s.functions,
            s.runs,
            s.failed_runs,
            s.not_started_pct,
            s.stuck_pct,
            s.violation_pct,
            s.worst_function_violation_pct,
            s.final_performance_mean_pct,
            s.final_performance_sd_pct
        ));
    }
    out
}
