//! Command implementations. Each validates its inputs before writing.

use std::fs;
use std::path::{Path, PathBuf};

use afabench::datasets::{load_csv, CsvSchema, DatasetId, DatasetSplits};
use afabench::harness::{read_cells, read_csv, run_cell, ArtifactStore, CellSpec, CurveRow};
use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::plot::plot_curves;
use crate::report::render_report;
use crate::sweep::{default_jobs, run_pool, write_aggregates, SweepConfig};

/// Resolves `path` against `workdir` unless it is absolute.
pub fn under(workdir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        workdir.join(path)
    }
}

/// CSV options for `generate`.
#[derive(Clone, Debug, Default)]
pub struct CsvOptions {
    pub path: Option<PathBuf>,
    pub label_column: Option<String>,
    pub num_classes: Option<usize>,
}

/// Writes one split of `dataset` (train/val/test CSV plus manifest).
pub fn generate(
    workdir: &Path,
    dataset: DatasetId,
    seed: u64,
    out: Option<&Path>,
    csv: &CsvOptions,
) -> Result<PathBuf> {
    let data: DatasetSplits = match (dataset, &csv.path) {
        (_, Some(path)) => {
            let path = under(workdir, path);
            let label = csv.label_column.as_deref().context("--label-column is required with --csv")?;
            let k = csv.num_classes.context("--num-classes is required with --csv")?;
            let mut data = load_csv(&path, &CsvSchema::new(dataset.as_str(), label, k), seed)?;
            data.manifest.id = dataset;
            data
        }
        (DatasetId::Cube | DatasetId::AfaContext, None) => ArtifactStore::in_memory().generate(dataset, seed)?,
        (other, None) => bail!("dataset '{other}' is not synthetic; pass --csv with its source file"),
    };
    let dir = match out {
        Some(o) => under(workdir, o),
        None => workdir.join("data").join(dataset.as_str()).join(format!("split-{seed}")),
    };
    data.save(&dir).with_context(|| format!("writing {}", dir.display()))?;
    Ok(dir)
}

/// Echo of the effective options of a sweep command.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    workdir: &'a Path,
    config: &'a SweepConfig,
    cells: usize,
    failed: usize,
}

fn write_manifest(workdir: &Path, command: &str, cfg: &SweepConfig, cells: usize, failed: usize) -> Result<()> {
    let dir = workdir.join("results");
    fs::create_dir_all(&dir)?;
    let manifest = RunManifest {
        command,
        workdir,
        config: cfg,
        cells,
        failed,
    };
    fs::write(
        dir.join(format!("run-{command}.json")),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Outcome of a sweep command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepSummary {
    pub total: usize,
    pub failed: usize,
}

impl SweepSummary {
    pub fn success(&self) -> bool {
        self.failed == 0
    }
}

fn report_failures(label: &str, cells: &[CellSpec], results: &[Result<()>]) -> usize {
    let mut failed = 0;
    for (cell, r) in cells.iter().zip(results) {
        if let Err(e) = r {
            failed += 1;
            log::error!(
                "{label} {} / {} / b={} seed {} split {}: {e:#}",
                cell.dataset,
                cell.method,
                cell.budget,
                cell.seed,
                cell.split
            );
        }
    }
    failed
}

/// Trains the shared predictor of every (dataset, split).
pub fn pretrain(workdir: &Path, cfg: &SweepConfig) -> Result<SweepSummary> {
    let store = cfg.store(workdir, true);
    let pairs: Vec<(DatasetId, u64)> = cfg
        .datasets
        .iter()
        .flat_map(|&d| cfg.splits.iter().map(move |&s| (d, s)))
        .collect();
    let results = run_pool(&pairs, cfg.jobs.unwrap_or_else(default_jobs), |&(d, split)| -> Result<()> {
        let n = store.dataset(d, split)?.num_features();
        store.shared_predictor(d, split, &cfg.settings_for(d, n).pretrain)?;
        log::info!("shared predictor ready for {d} split {split}");
        Ok(())
    });
    let mut failed = 0;
    for ((d, s), r) in pairs.iter().zip(&results) {
        if let Err(e) = r {
            failed += 1;
            log::error!("pretrain {d} split {s}: {e:#}");
        }
    }
    write_manifest(workdir, "pretrain", cfg, pairs.len(), failed)?;
    Ok(SweepSummary {
        total: pairs.len(),
        failed,
    })
}

/// Trains (and checkpoints) every policy of the sweep.
pub fn train(workdir: &Path, cfg: &SweepConfig) -> Result<SweepSummary> {
    let store = cfg.store(workdir, true);
    let mut cells = cfg.cells();
    // Checkpoints do not depend on the scoring classifier.
    cells.retain(|c| c.classifier_mode == cfg.classifier_modes[0]);
    let results = run_pool(&cells, cfg.jobs.unwrap_or_else(default_jobs), |cell| -> Result<()> {
        let n = store.dataset(cell.dataset, cell.split)?.num_features();
        let ck = store.policy(cell, &cfg.settings_for(cell.dataset, n))?;
        log::info!(
            "trained {} on {} (b={}, seed {}, split {}) in {:.1}s",
            cell.method,
            cell.dataset,
            cell.budget,
            cell.seed,
            cell.split,
            ck.train_seconds
        );
        Ok(())
    });
    let failed = report_failures("train", &cells, &results);
    write_manifest(workdir, "train", cfg, cells.len(), failed)?;
    Ok(SweepSummary {
        total: cells.len(),
        failed,
    })
}

/// Runs every cell, writes per-cell files and refreshes the aggregates.
pub fn evaluate(workdir: &Path, cfg: &SweepConfig, train_missing: bool) -> Result<SweepSummary> {
    let store = cfg.store(workdir, train_missing);
    let cells = cfg.cells();
    let results = run_pool(&cells, cfg.jobs.unwrap_or_else(default_jobs), |cell| -> Result<()> {
        let n = store.dataset(cell.dataset, cell.split)?.num_features();
        let (r, _) = run_cell(&store, cell, &cfg.settings_for(cell.dataset, n))?;
        log::info!(
            "{} on {} (b={}, {}, seed {}, split {}): terminal {:.3}",
            cell.method,
            cell.dataset,
            cell.budget,
            cell.classifier_mode,
            cell.seed,
            cell.split,
            r.curve.last().copied().unwrap_or(f64::NAN)
        );
        Ok(())
    });
    let failed = report_failures("evaluate", &cells, &results);
    write_aggregates(workdir)?;
    write_manifest(workdir, "evaluate", cfg, cells.len(), failed)?;
    Ok(SweepSummary {
        total: cells.len(),
        failed,
    })
}

/// Writes SVG plots for the curve CSV at `results`.
pub fn plot(workdir: &Path, results: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let results = under(workdir, results);
    let rows: Vec<CurveRow> =
        read_csv(&results).with_context(|| format!("reading curve file {}", results.display()))?;
    plot_curves(&rows, &under(workdir, out))
}

/// Renders the markdown report for the cells under `results/cells`.
pub fn report(workdir: &Path, results: &Path) -> Result<String> {
    let results = under(workdir, results);
    let cells = read_cells(&results.join("cells"))?;
    render_report(&cells)
}
