//! Sweep configuration (config file merged with flags), cell expansion and
//! the bounded worker pool.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use afabench::datasets::{CsvSchema, DatasetId};
use afabench::harness::{
    aggregate_cells, read_cells, write_csv, ArtifactStore, BudgetPreset, CellSpec, ClassifierMode,
    MethodId, MethodSettings, Scale,
};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// CSV-backed dataset source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub dataset: DatasetId,
    pub path: PathBuf,
    pub label_column: String,
    pub num_classes: usize,
}

/// Everything a train/evaluate sweep needs. Every field is optional in the
/// config file; flags replace file values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub datasets: Vec<DatasetId>,
    pub methods: Vec<MethodId>,
    /// Explicit budgets; when empty, `budget_presets` apply.
    pub budgets: Vec<usize>,
    pub budget_presets: Vec<BudgetPreset>,
    pub classifier_modes: Vec<ClassifierMode>,
    pub seeds: Vec<u64>,
    pub splits: Vec<u64>,
    pub scale: Option<Scale>,
    pub jobs: Option<usize>,
    pub csv: Vec<CsvSource>,
    /// Per-dataset replacement for the preset settings.
    pub settings: BTreeMap<DatasetId, MethodSettings>,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Fields set in `flags` replace those of `self`.
    pub fn merge(mut self, flags: SweepConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => {$(
                if !flags.$f.is_empty() {
                    self.$f = flags.$f;
                }
            )*};
        }
        take!(datasets, methods, budgets, budget_presets, classifier_modes, seeds, splits, csv);
        if flags.scale.is_some() {
            self.scale = flags.scale;
        }
        if flags.jobs.is_some() {
            self.jobs = flags.jobs;
        }
        self.settings.extend(flags.settings);
        self
    }

    /// Fills defaults and checks the sweep before anything is written.
    pub fn resolve(mut self) -> Result<Self> {
        if self.datasets.is_empty() {
            bail!("no datasets given");
        }
        if self.seeds.is_empty() {
            self.seeds = vec![0, 1, 2];
        }
        if self.splits.is_empty() {
            self.splits = vec![0, 1, 2];
        }
        if self.classifier_modes.is_empty() {
            self.classifier_modes = vec![ClassifierMode::Shared];
        }
        if self.budgets.is_empty() && self.budget_presets.is_empty() {
            self.budget_presets = vec![BudgetPreset::Small, BudgetPreset::Medium, BudgetPreset::Large];
        }
        if self.scale.is_none() {
            self.scale = Some(Scale::Full);
        }
        if self.jobs == Some(0) {
            bail!("--jobs must be at least 1");
        }
        for src in &self.csv {
            if !src.path.exists() {
                bail!("CSV source {} does not exist", src.path.display());
            }
        }
        Ok(self)
    }

    /// Methods for `dataset`: the explicit list, or every method (the oracle
    /// only on AFAContext).
    pub fn methods_for(&self, dataset: DatasetId) -> Vec<MethodId> {
        if !self.methods.is_empty() {
            return self.methods.clone();
        }
        MethodId::ALL
            .into_iter()
            .filter(|&m| m != MethodId::Oracle || dataset == DatasetId::AfaContext)
            .collect()
    }

    pub fn budgets_for(&self, dataset: DatasetId) -> Vec<usize> {
        let mut b = self.budgets.clone();
        b.extend(self.budget_presets.iter().map(|p| p.resolve(dataset)));
        b.sort_unstable();
        b.dedup();
        b
    }

    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        for &dataset in &self.datasets {
            for method in self.methods_for(dataset) {
                for &classifier_mode in &self.classifier_modes {
                    for budget in self.budgets_for(dataset) {
                        for &split in &self.splits {
                            for &seed in &self.seeds {
                                out.push(CellSpec {
                                    dataset,
                                    method,
                                    classifier_mode,
                                    budget,
                                    seed,
                                    split,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn settings_for(&self, dataset: DatasetId, num_features: usize) -> MethodSettings {
        self.settings
            .get(&dataset)
            .cloned()
            .unwrap_or_else(|| MethodSettings::preset(dataset, num_features, self.scale.unwrap_or_default()))
    }

    pub fn store(&self, workdir: &Path, train_missing: bool) -> ArtifactStore {
        let mut store = ArtifactStore::at(workdir);
        store.train_missing = train_missing;
        for src in &self.csv {
            store.register_csv(
                src.dataset,
                &src.path,
                CsvSchema::new(src.dataset.as_str(), &src.label_column, src.num_classes),
            );
        }
        store
    }
}

/// Runs `work` on every item with at most `jobs` threads. Returns one result
/// per item, in input order.
pub fn run_pool<T: Sync, R: Send>(items: &[T], jobs: usize, work: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let workers = jobs.clamp(1, items.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = work(&items[i]);
                results.lock().expect("result lock poisoned")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("result lock poisoned")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Re-reads every cell under `results/cells` and writes `curves.csv`,
/// `timing.csv` and `metrics.csv` into `results/`.
pub fn write_aggregates(workdir: &Path) -> Result<usize> {
    let results = workdir.join("results");
    let cells = read_cells(&results.join("cells"))?;
    if cells.is_empty() {
        return Ok(0);
    }
    write_csv(&results.join("curves.csv"), &aggregate_cells(&cells)?)?;
    write_csv(&results.join("timing.csv"), &afabench::harness::results::timing_rows(&cells))?;
    write_csv(&results.join("metrics.csv"), &afabench::harness::results::metric_rows(&cells))?;
    Ok(cells.len())
}
