//! Per-run metric records, mean ± std aggregation and their CSV forms.

use std::fmt::Write as _;

use abha_core::metrics::{MetricReport, METRIC_NAMES};

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub task: String,
    pub method: String,
    pub seed: u64,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub task: String,
    pub method: String,
    pub runs: usize,
    pub mean: [f64; 8],
    /// Sample standard deviation (`n − 1`); 0 for a single run.
    pub std: [f64; 8],
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    if values.iter().all(|v| *v == values[0]) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One summary per (task, method) in order of first appearance.
pub fn aggregate(records: &[RunRecord]) -> Vec<Summary> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in records {
        let key = (r.task.as_str(), r.method.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(task, method)| {
            let group: Vec<[f64; 8]> = records
                .iter()
                .filter(|r| r.task == task && r.method == method)
                .map(|r| r.report.values())
                .collect();
            let mut mean = [0.0; 8];
            let mut std = [0.0; 8];
            for k in 0..8 {
                let column: Vec<f64> = group.iter().map(|v| v[k]).collect();
                (mean[k], std[k]) = mean_std(&column);
            }
            Summary {
                task: task.to_string(),
                method: method.to_string(),
                runs: group.len(),
                mean,
                std,
            }
        })
        .collect()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))
}

pub fn report_csv(records: &[RunRecord]) -> anyhow::Result<Vec<u8>> {
    let mut header = vec!["task", "method", "seed"];
    header.extend(METRIC_NAMES);
    header.push("undefined");
    csv_bytes(
        &header,
        records.iter().map(|r| {
            let mut row = vec![r.task.clone(), r.method.clone(), r.seed.to_string()];
            row.extend(r.report.values().iter().map(f64::to_string));
            row.push(r.report.undefined.to_string());
            row
        }),
    )
}

/// Long form: one row per (task, method, metric).
pub fn summary_csv(summaries: &[Summary]) -> anyhow::Result<Vec<u8>> {
    csv_bytes(
        &["task", "method", "runs", "metric", "mean", "std"],
        summaries.iter().flat_map(|s| {
            METRIC_NAMES.iter().enumerate().map(move |(k, name)| {
                vec![
                    s.task.clone(),
                    s.method.clone(),
                    s.runs.to_string(),
                    name.to_string(),
                    s.mean[k].to_string(),
                    s.std[k].to_string(),
                ]
            })
        }),
    )
}

/// Wide form: one row per (task, method) with `<metric>_mean` and
/// `<metric>_std` columns.
pub fn comparison_csv(summaries: &[Summary]) -> anyhow::Result<Vec<u8>> {
    let names: Vec<String> = METRIC_NAMES
        .iter()
        .flat_map(|m| [format!("{m}_mean"), format!("{m}_std")])
        .collect();
    let mut header = vec!["task", "method", "runs"];
    header.extend(names.iter().map(String::as_str));
    csv_bytes(
        &header,
        summaries.iter().map(|s| {
            let mut row = vec![s.task.clone(), s.method.clone(), s.runs.to_string()];
            for k in 0..8 {
                row.push(s.mean[k].to_string());
                row.push(s.std[k].to_string());
            }
            row
        }),
    )
}

/// Fixed-width `mean±std` table for the terminal.
pub fn render_table(summaries: &[Summary]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<6} {:<12}", "task", "method");
    for name in METRIC_NAMES {
        let _ = write!(out, " {name:>13}");
    }
    out.push('\n');
    for s in summaries {
        let _ = write!(out, "{:<6} {:<12}", s.task, s.method);
        for k in 0..8 {
            let _ = write!(out, " {:>13}", format!("{:.3}±{:.3}", s.mean[k], s.std[k]));
        }
        out.push('\n');
    }
    out
}
