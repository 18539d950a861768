//! Result persistence: aggregated curve CSV, per-cell JSON, timing log.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::curve::BudgetCurve;
use super::experiment::{CellResult, ClassifierMode};
use super::methods::MethodId;
use super::metric::MetricKind;
use crate::error::{AfaError, Result};

/// One row of the aggregated curve CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub dataset: String,
    pub method: String,
    pub classifier_mode: String,
    pub budget: usize,
    pub step: usize,
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

/// One row of the timing log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub dataset: String,
    pub method: String,
    pub budget: usize,
    pub seed: u64,
    pub split: u64,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

/// Metric kind per dataset, stored next to the curves so plots can label axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub metric: MetricKind,
}

pub fn curve_rows(dataset: &str, method: MethodId, mode: ClassifierMode, curve: &BudgetCurve) -> Vec<CurveRow> {
    (0..curve.budget())
        .map(|t| CurveRow {
            dataset: dataset.to_string(),
            method: method.as_str().to_string(),
            classifier_mode: mode.as_str().to_string(),
            budget: curve.budget(),
            step: t + 1,
            mean: curve.mean[t],
            std: curve.std[t],
            n_runs: curve.n_runs,
        })
        .collect()
}

/// Groups cells by (dataset, method, mode, budget) and aggregates each group.
pub fn aggregate_cells(cells: &[CellResult]) -> Result<Vec<CurveRow>> {
    let mut groups: BTreeMap<(String, MethodId, ClassifierMode, usize), Vec<&CellResult>> = BTreeMap::new();
    for c in cells {
        groups
            .entry((c.dataset.clone(), c.cell.method, c.cell.classifier_mode, c.cell.budget))
            .or_default()
            .push(c);
    }
    let mut rows = Vec::new();
    for ((dataset, method, mode, _), group) in groups {
        let runs: Vec<Vec<f64>> = group.iter().map(|c| c.curve.clone()).collect();
        let curve = BudgetCurve::from_runs(group[0].metric, &runs)?;
        rows.extend(curve_rows(&dataset, method, mode, &curve));
    }
    Ok(rows)
}

pub fn timing_rows(cells: &[CellResult]) -> Vec<TimingRow> {
    cells
        .iter()
        .map(|c| TimingRow {
            dataset: c.dataset.clone(),
            method: c.cell.method.as_str().to_string(),
            budget: c.cell.budget,
            seed: c.cell.seed,
            split: c.cell.split,
            train_seconds: c.train_seconds,
            eval_seconds: c.eval_seconds,
        })
        .collect()
}

pub fn metric_rows(cells: &[CellResult]) -> Vec<MetricRow> {
    let mut seen: BTreeMap<String, MetricKind> = BTreeMap::new();
    for c in cells {
        seen.entry(c.dataset.clone()).or_insert(c.metric);
    }
    seen.into_iter()
        .map(|(dataset, metric)| MetricRow { dataset, metric })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

/// Every `*.json` cell record below `dir`, sorted for stable output.
pub fn read_cells(dir: &Path) -> Result<Vec<CellResult>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "json") {
                let cell: CellResult = serde_json::from_str(&fs::read_to_string(&path)?)
                    .map_err(|e| AfaError::Schema(format!("{}: {e}", path.display())))?;
                out.push(cell);
            }
        }
    }
    out.sort_by(|a, b| {
        (&a.dataset, a.cell.method, a.cell.classifier_mode, a.cell.budget, a.cell.split, a.cell.seed).cmp(&(
            &b.dataset,
            b.cell.method,
            b.cell.classifier_mode,
            b.cell.budget,
            b.cell.split,
            b.cell.seed,
        ))
    });
    Ok(out)
}
