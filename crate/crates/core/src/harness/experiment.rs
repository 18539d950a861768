//! Experiment configuration, the artifact store, and the per-cell runner.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::curve::{replay_curve, transcripts_from_states, BudgetCurve};
use super::methods::{train_method, MethodId, MethodSettings, Scale, TrainedPolicy};
use super::metric::MetricKind;
use crate::datasets::{
    generate_afacontext, generate_cube, load_csv, AfaContextSpec, CsvSchema, CubeSpec, DatasetId,
    DatasetSplits,
};
use crate::env::EpisodeTranscript;
use crate::error::{AfaError, Result};
use crate::policy::rollout;
use crate::predictor::{pretrain_shared, Classifier, PretrainConfig, SharedPredictor};
use crate::rl::TrainingRecord;
use crate::rng::{fnv1a, stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierMode {
    #[default]
    Shared,
    Builtin,
}

impl ClassifierMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierMode::Shared => "shared",
            ClassifierMode::Builtin => "builtin",
        }
    }
}

impl fmt::Display for ClassifierMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierMode {
    type Err = AfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(ClassifierMode::Shared),
            "builtin" => Ok(ClassifierMode::Builtin),
            other => Err(AfaError::config(format!("unknown classifier mode '{other}'"))),
        }
    }
}

/// Named budget from a dataset's presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetPreset {
    Small,
    Medium,
    Large,
}

impl BudgetPreset {
    pub fn resolve(self, id: DatasetId) -> usize {
        let [s, m, l] = id.budget_presets();
        match self {
            BudgetPreset::Small => s,
            BudgetPreset::Medium => m,
            BudgetPreset::Large => l,
        }
    }
}

/// One method on one dataset at one budget, over seeds × splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetId,
    pub method: MethodId,
    pub budget: usize,
    #[serde(default)]
    pub classifier_mode: ClassifierMode,
    #[serde(default = "default_indices")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_indices")]
    pub splits: Vec<u64>,
    #[serde(default)]
    pub scale: Scale,
    /// Replaces the preset for this dataset and scale.
    #[serde(default)]
    pub settings: Option<MethodSettings>,
}

fn default_indices() -> Vec<u64> {
    vec![0, 1, 2]
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetId, method: MethodId, budget: usize) -> Self {
        Self {
            dataset,
            method,
            budget,
            classifier_mode: ClassifierMode::Shared,
            seeds: default_indices(),
            splits: default_indices(),
            scale: Scale::Full,
            settings: None,
        }
    }

    pub fn with_preset(dataset: DatasetId, method: MethodId, preset: BudgetPreset) -> Self {
        Self::new(dataset, method, preset.resolve(dataset))
    }

    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        for &split in &self.splits {
            for &seed in &self.seeds {
                out.push(CellSpec {
                    dataset: self.dataset,
                    method: self.method,
                    classifier_mode: self.classifier_mode,
                    budget: self.budget,
                    seed,
                    split,
                });
            }
        }
        out
    }

    pub fn settings_for(&self, num_features: usize) -> MethodSettings {
        self.settings
            .clone()
            .unwrap_or_else(|| MethodSettings::preset(self.dataset, num_features, self.scale))
    }
}

/// One (method, dataset, classifier mode, budget, seed, split) run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellSpec {
    pub dataset: DatasetId,
    pub method: MethodId,
    pub classifier_mode: ClassifierMode,
    pub budget: usize,
    pub seed: u64,
    pub split: u64,
}

impl CellSpec {
    /// Seed for policy training and rollout noise.
    pub fn policy_seed(&self) -> u64 {
        fnv1a(format!("{}/{}/{}", self.method, self.seed, self.split).as_bytes())
    }

    /// File stem shared by the cell's result and transcript files.
    pub fn stem(&self) -> String {
        format!(
            "{}-b{}-seed{}-split{}",
            self.classifier_mode, self.budget, self.seed, self.split
        )
    }
}

/// Result record of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub cell: CellSpec,
    pub metric: MetricKind,
    /// Metric after acquisition steps `1..=budget`.
    pub curve: Vec<f64>,
    pub dataset_fingerprint: String,
    pub shared_fingerprint: String,
    /// Fingerprint of the classifier the curve was scored with.
    pub scoring_fingerprint: String,
    pub train_seconds: f64,
    pub eval_seconds: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// A trained policy plus the provenance needed to reuse it safely.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub dataset_fingerprint: String,
    pub shared_fingerprint: String,
    pub method: MethodId,
    pub budget: usize,
    pub seed: u64,
    pub split: u64,
    pub train_seconds: f64,
    pub history: Vec<TrainingRecord>,
    pub warnings: Vec<String>,
    pub policy: TrainedPolicy,
}

type Slot<T> = Arc<Mutex<Option<Arc<T>>>>;

/// Datasets, shared predictors and policy checkpoints, cached in memory and
/// optionally persisted under a work directory.
///
/// Layout under the root: `data/<dataset>/split-<k>/`,
/// `predictors/<dataset>/split-<k>.json`,
/// `policies/<dataset>/<method>/b<b>-seed<s>-split<k>.json`,
/// `results/cells/<dataset>/<method>/<stem>.{json,jsonl}`.
pub struct ArtifactStore {
    root: Option<PathBuf>,
    /// Train policies and predictors that have no checkpoint.
    pub train_missing: bool,
    csv_sources: HashMap<DatasetId, (PathBuf, CsvSchema)>,
    datasets: Mutex<HashMap<(DatasetId, u64), Slot<DatasetSplits>>>,
    predictors: Mutex<HashMap<(DatasetId, u64), Slot<SharedPredictor>>>,
}

impl Default for ArtifactStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

fn slot<K: std::hash::Hash + Eq, T>(map: &Mutex<HashMap<K, Slot<T>>>, key: K) -> Slot<T> {
    map.lock()
        .expect("cache lock poisoned")
        .entry(key)
        .or_default()
        .clone()
}

impl ArtifactStore {
    pub fn in_memory() -> Self {
        Self {
            root: None,
            train_missing: true,
            csv_sources: HashMap::new(),
            datasets: Mutex::default(),
            predictors: Mutex::default(),
        }
    }

    pub fn at(root: impl Into<PathBuf>) -> Self {
        Self {
            root: Some(root.into()),
            ..Self::in_memory()
        }
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Sources `id` from a CSV file; the split index seeds the partition.
    pub fn register_csv(&mut self, id: DatasetId, path: impl Into<PathBuf>, schema: CsvSchema) {
        self.csv_sources.insert(id, (path.into(), schema));
    }

    pub fn dataset_dir(&self, id: DatasetId, split: u64) -> Option<PathBuf> {
        self.root
            .as_ref()
            .map(|r| r.join("data").join(id.as_str()).join(format!("split-{split}")))
    }

    pub fn predictor_path(&self, id: DatasetId, split: u64) -> Option<PathBuf> {
        self.root.as_ref().map(|r| {
            r.join("predictors")
                .join(id.as_str())
                .join(format!("split-{split}.json"))
        })
    }

    pub fn policy_path(&self, cell: &CellSpec) -> Option<PathBuf> {
        self.root.as_ref().map(|r| {
            r.join("policies")
                .join(cell.dataset.as_str())
                .join(cell.method.as_str())
                .join(format!("b{}-seed{}-split{}.json", cell.budget, cell.seed, cell.split))
        })
    }

    pub fn cell_dir(&self, cell: &CellSpec) -> Option<PathBuf> {
        self.root.as_ref().map(|r| {
            r.join("results")
                .join("cells")
                .join(cell.dataset.as_str())
                .join(cell.method.as_str())
        })
    }

    /// Builds split `split` of dataset `id` from its generator or CSV source.
    pub fn generate(&self, id: DatasetId, split: u64) -> Result<DatasetSplits> {
        match id {
            DatasetId::Cube => generate_cube(&CubeSpec::default(), split),
            DatasetId::AfaContext => generate_afacontext(&AfaContextSpec::default(), split),
            other => match self.csv_sources.get(&other) {
                Some((path, schema)) => {
                    let mut data = load_csv(path, schema, split)?;
                    data.manifest.id = other;
                    Ok(data)
                }
                None => Err(AfaError::Dataset(format!(
                    "no source registered for dataset '{other}'"
                ))),
            },
        }
    }

    /// The dataset split, loaded from disk when persisted, else generated
    /// (and persisted when a root is set).
    pub fn dataset(&self, id: DatasetId, split: u64) -> Result<Arc<DatasetSplits>> {
        let s = slot(&self.datasets, (id, split));
        let mut guard = s.lock().expect("dataset slot poisoned");
        if let Some(d) = guard.as_ref() {
            return Ok(d.clone());
        }
        let dir = self.dataset_dir(id, split);
        let data = match &dir {
            Some(dir) if dir.join("manifest.json").exists() => DatasetSplits::load(dir)?,
            _ => {
                let data = self.generate(id, split)?;
                if let Some(dir) = &dir {
                    data.save(dir)?;
                }
                data
            }
        };
        let data = Arc::new(data);
        *guard = Some(data.clone());
        Ok(data)
    }

    /// The shared predictor for a dataset split (pretraining seed = split).
    pub fn shared_predictor(
        &self,
        id: DatasetId,
        split: u64,
        cfg: &PretrainConfig,
    ) -> Result<Arc<SharedPredictor>> {
        let s = slot(&self.predictors, (id, split));
        let mut guard = s.lock().expect("predictor slot poisoned");
        if let Some(p) = guard.as_ref() {
            return Ok(p.clone());
        }
        let data = self.dataset(id, split)?;
        let path = self.predictor_path(id, split);
        let pred = match &path {
            Some(p) if p.exists() => SharedPredictor::load(p)?,
            _ if !self.train_missing => {
                return Err(AfaError::MissingCheckpoint(match path {
                    Some(p) => p.display().to_string(),
                    None => format!("shared predictor for {id} split {split}"),
                }))
            }
            _ => {
                let pred = pretrain_shared(&data, &id.masking(), cfg, split)?;
                if let Some(p) = &path {
                    pred.save(p)?;
                }
                pred
            }
        };
        pred.check_dataset(&data)?;
        let pred = Arc::new(pred);
        *guard = Some(pred.clone());
        Ok(pred)
    }

    /// Loads the cell's policy checkpoint, or trains (and persists) it.
    pub fn policy(&self, cell: &CellSpec, settings: &MethodSettings) -> Result<PolicyCheckpoint> {
        let data = self.dataset(cell.dataset, cell.split)?;
        let shared = self.shared_predictor(cell.dataset, cell.split, &settings.pretrain)?;
        let path = self.policy_path(cell);
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            let ck: PolicyCheckpoint = serde_json::from_str(&fs::read_to_string(p)?)?;
            if ck.dataset_fingerprint != data.fingerprint() {
                return Err(AfaError::FingerprintMismatch {
                    expected: data.fingerprint().to_string(),
                    found: ck.dataset_fingerprint,
                });
            }
            return Ok(ck);
        }
        if !self.train_missing {
            return Err(AfaError::MissingCheckpoint(match path {
                Some(p) => p.display().to_string(),
                None => format!("{} policy for {}", cell.method, cell.dataset),
            }));
        }
        let start = Instant::now();
        let trained = train_method(cell.method, &data, &shared, cell.budget, settings, cell.policy_seed())?;
        let ck = PolicyCheckpoint {
            dataset_fingerprint: data.fingerprint().to_string(),
            shared_fingerprint: shared.fingerprint(),
            method: cell.method,
            budget: cell.budget,
            seed: cell.seed,
            split: cell.split,
            train_seconds: start.elapsed().as_secs_f64(),
            history: trained.history,
            warnings: trained.warnings,
            policy: trained.policy,
        };
        if let Some(p) = &path {
            write_json(p, &ck)?;
        }
        Ok(ck)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string(value)?)?;
    Ok(())
}

/// Trains (or loads) the cell's policy, rolls it out on the test split and
/// scores the replayed transcripts.
pub fn run_cell(
    store: &ArtifactStore,
    cell: &CellSpec,
    settings: &MethodSettings,
) -> Result<(CellResult, Vec<EpisodeTranscript>)> {
    let data = store.dataset(cell.dataset, cell.split)?;
    let shared = store.shared_predictor(cell.dataset, cell.split, &settings.pretrain)?;
    let ck = store.policy(cell, settings)?;
    if ck.shared_fingerprint != shared.fingerprint() && cell.method != MethodId::Random {
        log::warn!("{} checkpoint was trained against a different shared predictor", cell.method);
    }
    let start = Instant::now();
    let policy = ck.policy.instantiate(&data, &shared)?;
    let mut rng = stream(cell.policy_seed(), "evaluation");
    let states = rollout(policy.as_ref(), &data.test.features, cell.budget, &mut rng)?;
    let transcripts = transcripts_from_states(&states);
    let scorer: &dyn Classifier = match cell.classifier_mode {
        ClassifierMode::Shared => shared.as_ref(),
        ClassifierMode::Builtin => policy.builtin_classifier().unwrap_or(shared.as_ref()),
    };
    let kind = data.id().metric();
    let curve = replay_curve(scorer, &data.test, &transcripts, cell.budget, kind)?;
    let result = CellResult {
        dataset: data.manifest.name.clone(),
        cell: *cell,
        metric: kind,
        curve,
        dataset_fingerprint: data.fingerprint().to_string(),
        shared_fingerprint: shared.fingerprint(),
        scoring_fingerprint: scorer.fingerprint(),
        train_seconds: ck.train_seconds,
        eval_seconds: start.elapsed().as_secs_f64(),
        warnings: ck.warnings,
    };
    if let Some(dir) = store.cell_dir(cell) {
        write_cell(&dir, &result, &transcripts)?;
    }
    Ok((result, transcripts))
}

/// Writes `<stem>.json` and `<stem>.jsonl` (transcripts) into `dir`.
pub fn write_cell(dir: &Path, result: &CellResult, transcripts: &[EpisodeTranscript]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let stem = result.cell.stem();
    write_json(&dir.join(format!("{stem}.json")), result)?;
    let file = fs::File::create(dir.join(format!("{stem}.jsonl")))?;
    crate::env::write_transcripts(std::io::BufWriter::new(file), transcripts)
}

/// Aggregated outcome of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub curve: BudgetCurve,
    pub cells: Vec<CellResult>,
    pub transcripts: Vec<Vec<EpisodeTranscript>>,
}

/// Runs every seed × split cell of `cfg` and aggregates the curves.
pub fn run_experiment(cfg: &ExperimentConfig, store: &ArtifactStore) -> Result<ExperimentOutcome> {
    let mut cells = Vec::new();
    let mut transcripts = Vec::new();
    for cell in cfg.cells() {
        let d = store.dataset(cell.dataset, cell.split)?.num_features();
        let (result, t) = run_cell(store, &cell, &cfg.settings_for(d))?;
        log::info!(
            "{} on {} split {} seed {}: terminal {:.3}",
            cell.method,
            result.dataset,
            cell.split,
            cell.seed,
            result.curve.last().copied().unwrap_or(f64::NAN)
        );
        cells.push(result);
        transcripts.push(t);
    }
    let kind = cfg.dataset.metric();
    let runs: Vec<Vec<f64>> = cells.iter().map(|c| c.curve.clone()).collect();
    Ok(ExperimentOutcome {
        curve: BudgetCurve::from_runs(kind, &runs)?,
        cells,
        transcripts,
    })
}
