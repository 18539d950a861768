//! Markdown summary of result cells.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use afabench::harness::CellResult;
use anyhow::{bail, Result};

const MISSING: &str = "—";

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn fmt_pm(values: &[f64], digits: usize) -> String {
    if values.is_empty() {
        return MISSING.to_string();
    }
    let (m, s) = mean_std(values);
    format!("{m:.digits$} ± {s:.digits$}")
}

/// Terminal-step metric per method × (dataset, budget), then a compute-time
/// table per method × dataset.
pub fn render_report(cells: &[CellResult]) -> Result<String> {
    if cells.is_empty() {
        bail!("no result cells to report");
    }
    let mut columns: BTreeSet<(String, usize)> = BTreeSet::new();
    let mut rows: BTreeSet<(String, String)> = BTreeSet::new();
    let mut terminal: BTreeMap<(String, String, String, usize), Vec<f64>> = BTreeMap::new();
    let mut timing: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for c in cells {
        let method = c.cell.method.as_str().to_string();
        let mode = c.cell.classifier_mode.as_str().to_string();
        columns.insert((c.dataset.clone(), c.cell.budget));
        rows.insert((method.clone(), mode.clone()));
        if let Some(&last) = c.curve.last() {
            terminal
                .entry((method.clone(), mode, c.dataset.clone(), c.cell.budget))
                .or_default()
                .push(last);
        }
        let t = timing.entry((method, c.dataset.clone())).or_default();
        t.0.push(c.train_seconds);
        t.1.push(c.eval_seconds);
    }

    let mut out = String::new();
    writeln!(out, "# Results\n")?;
    writeln!(out, "Terminal-step metric, mean ± std across seed × split runs.\n")?;
    let mut header = String::from("| Method | Classifier |");
    let mut rule = String::from("|---|---|");
    for (dataset, budget) in &columns {
        write!(header, " {dataset} (b={budget}) |")?;
        rule.push_str("---|");
    }
    writeln!(out, "{header}\n{rule}")?;
    for (method, mode) in &rows {
        let mut line = format!("| {method} | {mode} |");
        for (dataset, budget) in &columns {
            let key = (method.clone(), mode.clone(), dataset.clone(), *budget);
            let cell = terminal.get(&key).map_or_else(|| MISSING.to_string(), |v| fmt_pm(v, 3));
            write!(line, " {cell} |")?;
        }
        writeln!(out, "{line}")?;
    }

    writeln!(out, "\n## Compute time\n")?;
    writeln!(out, "Seconds per run, mean ± std.\n")?;
    writeln!(out, "| Method | Dataset | Train s | Eval s |\n|---|---|---|---|")?;
    for ((method, dataset), (train, eval)) in &timing {
        writeln!(out, "| {method} | {dataset} | {} | {} |", fmt_pm(train, 2), fmt_pm(eval, 2))?;
    }
    Ok(out)
}
