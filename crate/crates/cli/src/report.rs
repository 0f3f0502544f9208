//! Forgetting reports as CSV and markdown.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};

use metacl::evalcl::{forgetting_delta, ForgettingMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub metric: String,
    pub immediate: f64,
    #[serde(rename = "final")]
    pub final_score: f64,
    pub delta: f64,
}

pub fn rows(matrix: &ForgettingMatrix) -> Vec<ReportRow> {
    let deltas = matrix.deltas();
    (0..matrix.len())
        .map(|i| ReportRow {
            task: matrix.task_ids[i].clone(),
            metric: matrix.metrics[i].name().to_owned(),
            immediate: matrix.immediate[i],
            final_score: matrix.final_scores[i],
            delta: deltas[i],
        })
        .collect()
}

pub fn to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn from_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows = r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?;
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading report {}", path.display()))?;
    from_csv(&text).with_context(|| format!("parsing report {}", path.display()))
}

/// Mean delta over every task but the last.
pub fn mean_delta(rows: &[ReportRow]) -> Option<f64> {
    let matrix = ForgettingMatrix {
        task_ids: rows.iter().map(|r| r.task.clone()).collect(),
        metrics: Vec::new(),
        immediate: rows.iter().map(|r| r.immediate).collect(),
        final_scores: rows.iter().map(|r| r.final_score).collect(),
    };
    forgetting_delta(&matrix)
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), pct)
}

/// Table with `immediate/final` cells, values ×100.
pub fn to_markdown(rows: &[ReportRow]) -> String {
    let mut s = String::from("| task | metric | immediate/final | delta |\n|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {}/{} | {} |",
            r.task,
            r.metric,
            pct(r.immediate),
            pct(r.final_score),
            pct(r.delta)
        );
    }
    let _ = writeln!(s, "\nmean forgetting delta: {}", fmt_opt(mean_delta(rows)));
    s
}

/// One named run for [`comparison`].
pub struct NamedReport {
    pub name: String,
    pub rows: Vec<ReportRow>,
}

/// Long-format CSV and a wide markdown table with one column per run.
pub fn comparison(runs: &[NamedReport]) -> Result<(String, String)> {
    ensure!(!runs.is_empty(), "no runs to compare");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "task", "metric", "immediate", "final", "delta"])?;
    for run in runs {
        for r in &run.rows {
            w.write_record([
                run.name.as_str(),
                &r.task,
                &r.metric,
                &r.immediate.to_string(),
                &r.final_score.to_string(),
                &r.delta.to_string(),
            ])?;
        }
    }
    let csv = String::from_utf8(w.into_inner()?)?;

    let mut tasks: Vec<(String, String)> = Vec::new();
    for run in runs {
        for r in &run.rows {
            if !tasks.iter().any(|(t, _)| t == &r.task) {
                tasks.push((r.task.clone(), r.metric.clone()));
            }
        }
    }
    let mut md = String::from("| task | metric |");
    for run in runs {
        let _ = write!(md, " {} |", run.name);
    }
    md.push_str("\n|---|---|");
    md.push_str(&"---|".repeat(runs.len()));
    md.push('\n');
    for (task, metric) in &tasks {
        let _ = write!(md, "| {task} | {metric} |");
        for run in runs {
            let cell = run
                .rows
                .iter()
                .find(|r| &r.task == task)
                .map_or_else(|| "-".to_owned(), |r| format!("{}/{}", pct(r.immediate), pct(r.final_score)));
            let _ = write!(md, " {cell} |");
        }
        md.push('\n');
    }
    md.push_str("| mean forgetting delta | |");
    for run in runs {
        let _ = write!(md, " {} |", fmt_opt(mean_delta(&run.rows)));
    }
    md.push('\n');
    Ok((csv, md))
}
