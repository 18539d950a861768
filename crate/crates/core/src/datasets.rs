//! Synthetic generators (CUBE, AFAContext), CSV ingestion, splitting,
//! standardization and pretraining mask sampling.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nnkit::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AfaError, Result};
use crate::harness::metric::MetricKind;
use crate::rng::{seeded, Fingerprint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One split of a tabular classification dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    pub name: String,
    pub split: Split,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl TabularDataset {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            split,
            features,
            labels,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.rows() != self.labels.len() {
            return Err(AfaError::Dataset(format!(
                "{} rows but {} labels",
                self.features.rows(),
                self.labels.len()
            )));
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(AfaError::Dataset(format!(
                "label {y} >= num_classes {}",
                self.num_classes
            )));
        }
        if !self.features.is_finite() {
            return Err(AfaError::Dataset("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            split: self.split,
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Empirical class distribution.
    pub fn class_prior(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.class_counts().iter().map(|&c| c as f64 / n).collect()
    }

    fn fingerprint_into(&self, fp: &mut Fingerprint) {
        fp.bytes(self.split.as_str().as_bytes())
            .usizes(&[self.features.rows(), self.features.cols(), self.num_classes])
            .f64s(self.features.as_slice())
            .usizes(&self.labels);
    }
}

/// Known dataset identities and their benchmark presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Cube,
    AfaContext,
    Mnist,
    FashionMnist,
    Diabetes,
    Physionet,
    Miniboone,
    Custom,
}

impl DatasetId {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Cube => "cube",
            DatasetId::AfaContext => "afacontext",
            DatasetId::Mnist => "mnist",
            DatasetId::FashionMnist => "fashionmnist",
            DatasetId::Diabetes => "diabetes",
            DatasetId::Physionet => "physionet",
            DatasetId::Miniboone => "miniboone",
            DatasetId::Custom => "custom",
        }
    }

    /// Small, medium and large budgets.
    pub fn budget_presets(self) -> [usize; 3] {
        match self {
            DatasetId::Cube | DatasetId::AfaContext | DatasetId::Custom => [3, 5, 10],
            DatasetId::Mnist | DatasetId::FashionMnist => [10, 20, 30],
            DatasetId::Diabetes | DatasetId::Physionet | DatasetId::Miniboone => [5, 10, 15],
        }
    }

    pub fn masking(self) -> MaskingDistribution {
        match self {
            DatasetId::Mnist | DatasetId::FashionMnist => MaskingDistribution::IMAGE,
            _ => MaskingDistribution::TABULAR,
        }
    }

    /// Masking probability used for validation during pretraining.
    pub fn validation_mask_probability(self) -> f64 {
        match self {
            DatasetId::Mnist | DatasetId::FashionMnist => 0.25,
            _ => 0.0,
        }
    }

    pub fn metric(self) -> MetricKind {
        match self {
            DatasetId::Physionet => MetricKind::F1,
            _ => MetricKind::Accuracy,
        }
    }

    pub fn is_image_like(self) -> bool {
        matches!(self, DatasetId::Mnist | DatasetId::FashionMnist)
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = AfaError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "cube" => DatasetId::Cube,
            "afacontext" => DatasetId::AfaContext,
            "mnist" => DatasetId::Mnist,
            "fashionmnist" => DatasetId::FashionMnist,
            "diabetes" => DatasetId::Diabetes,
            "physionet" => DatasetId::Physionet,
            "miniboone" => DatasetId::Miniboone,
            "custom" => DatasetId::Custom,
            other => return Err(AfaError::config(format!("unknown dataset id '{other}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeSpec {
    pub n_features: usize,
    pub n_classes: usize,
    pub informative_sigma: f64,
    pub noise_mean: f64,
    pub noise_sigma: f64,
    pub sizes: [usize; 3],
}

impl Default for CubeSpec {
    fn default() -> Self {
        Self {
            n_features: 20,
            n_classes: 8,
            informative_sigma: 0.3,
            noise_mean: 0.5,
            noise_sigma: 0.3,
            sizes: [700, 150, 150],
        }
    }
}

/// Width of the informative window of each class.
pub const CUBE_WINDOW: usize = 3;

impl CubeSpec {
    fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.n_classes + CUBE_WINDOW - 1 > self.n_features {
            return Err(AfaError::Dataset(format!(
                "CUBE needs n_features >= n_classes + 2, got {} and {}",
                self.n_features, self.n_classes
            )));
        }
        Ok(())
    }

    /// Informative features of `class`: `{class, class+1, class+2}`.
    pub fn informative(&self, class: usize) -> [usize; CUBE_WINDOW] {
        [class, class + 1, class + 2]
    }

    /// Per-feature means for `class`: feature `class + j` has mean equal to
    /// bit `j` of `class` (least significant first), everything else sits at
    /// the noise mean.
    pub fn class_means(&self, class: usize) -> Vec<f64> {
        let mut m = vec![self.noise_mean; self.n_features];
        for (j, idx) in self.informative(class).into_iter().enumerate() {
            m[idx] = cube_bit(class, j);
        }
        m
    }

    /// Per-feature standard deviations for `class`.
    pub fn class_sigmas(&self, class: usize) -> Vec<f64> {
        let mut s = vec![self.noise_sigma; self.n_features];
        for idx in self.informative(class) {
            s[idx] = self.informative_sigma;
        }
        s
    }
}

/// Bit `j` of `class`, as a mean value in {0, 1}.
pub fn cube_bit(class: usize, j: usize) -> f64 {
    ((class >> j) & 1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AfaContextSpec {
    pub n_features: usize,
    pub n_classes: usize,
    pub context: [usize; 2],
    /// First index and length of group A.
    pub group_a: (usize, usize),
    pub group_b: (usize, usize),
    pub informative_sigma: f64,
    pub noise_mean: f64,
    pub noise_sigma: f64,
    pub sizes: [usize; 3],
}

impl Default for AfaContextSpec {
    fn default() -> Self {
        Self {
            n_features: 30,
            n_classes: 8,
            context: [0, 1],
            group_a: (2, 10),
            group_b: (12, 10),
            informative_sigma: 0.3,
            noise_mean: 0.5,
            noise_sigma: 0.3,
            sizes: [700, 150, 150],
        }
    }
}

impl AfaContextSpec {
    fn validate(&self) -> Result<()> {
        let (a0, alen) = self.group_a;
        let (b0, blen) = self.group_b;
        let ok = alen == blen
            && self.n_classes + CUBE_WINDOW - 1 <= alen
            && self.context[0] != self.context[1]
            && self.context.iter().all(|&c| c < a0.min(b0))
            && a0 + alen <= b0
            && b0 + blen <= self.n_features;
        if ok {
            Ok(())
        } else {
            Err(AfaError::Dataset(format!("inconsistent AFAContext layout: {self:?}")))
        }
    }

    /// First index of the group selected by context `c` (0 → A, 1 → B).
    pub fn group_start(&self, context: usize) -> usize {
        if context == 0 {
            self.group_a.0
        } else {
            self.group_b.0
        }
    }

    pub fn group_len(&self) -> usize {
        self.group_a.1
    }

    pub fn group(&self, context: usize) -> std::ops::Range<usize> {
        let s = self.group_start(context);
        s..s + self.group_len()
    }

    /// Informative features for `(context, class)`.
    pub fn informative(&self, context: usize, class: usize) -> [usize; CUBE_WINDOW] {
        let g = self.group_start(context);
        [g + class, g + class + 1, g + class + 2]
    }

    /// Per-feature means given context and class. Context features are
    /// deterministic (one-hot of the context).
    pub fn class_means(&self, context: usize, class: usize) -> Vec<f64> {
        let mut m = vec![self.noise_mean; self.n_features];
        m[self.context[0]] = if context == 0 { 1.0 } else { 0.0 };
        m[self.context[1]] = if context == 1 { 1.0 } else { 0.0 };
        for (j, idx) in self.informative(context, class).into_iter().enumerate() {
            m[idx] = cube_bit(class, j);
        }
        m
    }

    pub fn class_sigmas(&self, context: usize, class: usize) -> Vec<f64> {
        let mut s = vec![self.noise_sigma; self.n_features];
        s[self.context[0]] = 0.0;
        s[self.context[1]] = 0.0;
        for idx in self.informative(context, class) {
            s[idx] = self.informative_sigma;
        }
        s
    }

    /// Context encoded by an observed value of a context feature.
    pub fn context_from(&self, feature: usize, value: f64) -> Option<usize> {
        let on = value > 0.5;
        if feature == self.context[0] {
            Some(if on { 0 } else { 1 })
        } else if feature == self.context[1] {
            Some(if on { 1 } else { 0 })
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GeneratorSpec {
    Cube(CubeSpec),
    AfaContext(AfaContextSpec),
}

/// Per-column affine standardization fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    /// Zero-variance columns keep σ = 1, so they standardize to all zeros.
    pub fn fit(features: &Matrix) -> Self {
        let n = features.rows().max(1) as f64;
        let means: Vec<f64> = features.sum_rows().into_iter().map(|s| s / n).collect();
        let mut vars = vec![0.0; features.cols()];
        for row in features.iter_rows() {
            for ((v, x), m) in vars.iter_mut().zip(row).zip(&means) {
                *v += (x - m) * (x - m);
            }
        }
        let stds = vars
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { means, stds }
    }

    pub fn apply(&self, features: &Matrix) -> Matrix {
        let mut out = features.clone();
        for r in 0..out.rows() {
            for ((x, m), s) in out.row_mut(r).iter_mut().zip(&self.means).zip(&self.stds) {
                *x = (*x - m) / s;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub id: DatasetId,
    pub seed: u64,
    pub sizes: [usize; 3],
    pub num_features: usize,
    pub num_classes: usize,
    pub standardization: Option<Standardization>,
    pub generator: Option<GeneratorSpec>,
    pub fingerprint: String,
}

/// Train/validation/test splits of one dataset plus provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits {
    pub train: TabularDataset,
    pub val: TabularDataset,
    pub test: TabularDataset,
    pub manifest: DatasetManifest,
}

impl DatasetSplits {
    fn assemble(
        id: DatasetId,
        name: &str,
        seed: u64,
        train: TabularDataset,
        val: TabularDataset,
        test: TabularDataset,
        standardization: Option<Standardization>,
        generator: Option<GeneratorSpec>,
    ) -> Result<Self> {
        for ds in [&train, &val, &test] {
            ds.validate()?;
        }
        let mut fp = Fingerprint::default();
        fp.bytes(name.as_bytes());
        for ds in [&train, &val, &test] {
            ds.fingerprint_into(&mut fp);
        }
        let manifest = DatasetManifest {
            name: name.to_string(),
            id,
            seed,
            sizes: [train.len(), val.len(), test.len()],
            num_features: train.num_features(),
            num_classes: train.num_classes,
            standardization,
            generator,
            fingerprint: fp.hex(),
        };
        Ok(Self {
            train,
            val,
            test,
            manifest,
        })
    }

    /// Splits built in memory, registered as [`DatasetId::Custom`] without
    /// standardization.
    pub fn custom(
        name: &str,
        seed: u64,
        train: TabularDataset,
        val: TabularDataset,
        test: TabularDataset,
    ) -> Result<Self> {
        Self::assemble(DatasetId::Custom, name, seed, train, val, test, None, None)
    }

    pub fn id(&self) -> DatasetId {
        self.manifest.id
    }

    pub fn num_features(&self) -> usize {
        self.manifest.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn fingerprint(&self) -> &str {
        &self.manifest.fingerprint
    }

    pub fn split(&self, split: Split) -> &TabularDataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Writes `train.csv`, `val.csv`, `test.csv` and `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for split in Split::ALL {
            let ds = self.split(split);
            let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", split.as_str())))?;
            let mut header: Vec<String> = (0..ds.num_features()).map(|j| format!("f{j}")).collect();
            header.push("label".into());
            w.write_record(&header)?;
            for (row, y) in ds.features.iter_rows().zip(&ds.labels) {
                let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                rec.push(y.to_string());
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&self.manifest)?,
        )?;
        Ok(())
    }

    /// Reads a directory written by [`DatasetSplits::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: DatasetManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let schema = CsvSchema::new(&manifest.name, "label", manifest.num_classes);
        let mut parts = Vec::new();
        for split in Split::ALL {
            let (features, labels) = read_csv(dir.join(format!("{}.csv", split.as_str())), &schema)?;
            parts.push(TabularDataset::new(
                manifest.name.clone(),
                split,
                features,
                labels,
                manifest.num_classes,
            )?);
        }
        let test = parts.pop().expect("three splits");
        let val = parts.pop().expect("three splits");
        let train = parts.pop().expect("three splits");
        let loaded = Self::assemble(
            manifest.id,
            &manifest.name,
            manifest.seed,
            train,
            val,
            test,
            manifest.standardization.clone(),
            manifest.generator.clone(),
        )?;
        if loaded.manifest.fingerprint != manifest.fingerprint {
            return Err(AfaError::FingerprintMismatch {
                expected: manifest.fingerprint,
                found: loaded.manifest.fingerprint,
            });
        }
        Ok(loaded)
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + sigma * z
}

/// CUBE: class `k` uniform; features `k, k+1, k+2` are `N(bit_j(k), σ_inf)`,
/// all others `N(noise_mean, noise_sigma)`.
pub fn generate_cube(spec: &CubeSpec, seed: u64) -> Result<DatasetSplits> {
    spec.validate()?;
    let mut rng = seeded(seed);
    let mut make = |split: Split, n: usize| -> Result<TabularDataset> {
        let mut features = Matrix::zeros(n, spec.n_features);
        let mut labels = Vec::with_capacity(n);
        for r in 0..n {
            let k = rng.random_range(0..spec.n_classes);
            let means = spec.class_means(k);
            let sigmas = spec.class_sigmas(k);
            for (j, x) in features.row_mut(r).iter_mut().enumerate() {
                *x = normal(&mut rng, means[j], sigmas[j]);
            }
            labels.push(k);
        }
        TabularDataset::new("cube", split, features, labels, spec.n_classes)
    };
    let train = make(Split::Train, spec.sizes[0])?;
    let val = make(Split::Val, spec.sizes[1])?;
    let test = make(Split::Test, spec.sizes[2])?;
    DatasetSplits::assemble(
        DatasetId::Cube,
        "cube",
        seed,
        train,
        val,
        test,
        None,
        Some(GeneratorSpec::Cube(spec.clone())),
    )
}

/// AFAContext: a uniform context selects which of two feature groups carries
/// a CUBE pattern for the (independent, uniform) label; the context is
/// one-hot encoded in two features that say nothing about the label alone.
pub fn generate_afacontext(spec: &AfaContextSpec, seed: u64) -> Result<DatasetSplits> {
    spec.validate()?;
    let mut rng = seeded(seed);
    let mut make = |split: Split, n: usize| -> Result<TabularDataset> {
        let mut features = Matrix::zeros(n, spec.n_features);
        let mut labels = Vec::with_capacity(n);
        for r in 0..n {
            let context = rng.random_range(0..2);
            let y = rng.random_range(0..spec.n_classes);
            let means = spec.class_means(context, y);
            let sigmas = spec.class_sigmas(context, y);
            for (j, x) in features.row_mut(r).iter_mut().enumerate() {
                *x = normal(&mut rng, means[j], sigmas[j]);
            }
            labels.push(y);
        }
        TabularDataset::new("afacontext", split, features, labels, spec.n_classes)
    };
    let train = make(Split::Train, spec.sizes[0])?;
    let val = make(Split::Val, spec.sizes[1])?;
    let test = make(Split::Test, spec.sizes[2])?;
    DatasetSplits::assemble(
        DatasetId::AfaContext,
        "afacontext",
        seed,
        train,
        val,
        test,
        None,
        Some(GeneratorSpec::AfaContext(spec.clone())),
    )
}

/// How to read a labelled CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub name: String,
    pub label_column: String,
    pub num_classes: usize,
    /// Train and validation fractions; the remainder is the test split.
    pub ratios: (f64, f64),
    pub id: DatasetId,
}

impl CsvSchema {
    pub fn new(name: &str, label_column: &str, num_classes: usize) -> Self {
        Self {
            name: name.to_string(),
            label_column: label_column.to_string(),
            num_classes,
            ratios: (0.7, 0.15),
            id: DatasetId::Custom,
        }
    }
}

fn read_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(Matrix, Vec<usize>)> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == schema.label_column)
        .ok_or_else(|| {
            AfaError::Schema(format!(
                "label column '{}' not found in {}",
                schema.label_column,
                path.display()
            ))
        })?;
    let d = headers.len() - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(AfaError::Schema(format!(
                "row {} has {} cells, expected {}",
                line + 1,
                record.len(),
                headers.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if c == label_idx {
                let label = cell
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0 && *v >= 0.0 && (*v as usize) < schema.num_classes)
                    .ok_or_else(|| {
                        AfaError::Schema(format!(
                            "unknown label value '{cell}' on row {} (expected 0..{})",
                            line + 1,
                            schema.num_classes
                        ))
                    })?;
                labels.push(label as usize);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    AfaError::Schema(format!(
                        "non-numeric cell '{cell}' in column '{}' on row {}",
                        &headers[c],
                        line + 1
                    ))
                })?;
                if !v.is_finite() {
                    return Err(AfaError::Schema(format!(
                        "missing or non-finite value in column '{}' on row {}",
                        &headers[c],
                        line + 1
                    )));
                }
                data.push(v);
            }
        }
    }
    let n = labels.len();
    Ok((Matrix::from_vec(n, d, data)?, labels))
}

/// Row order used to split a CSV: indices `0..n` shuffled in place with
/// `SliceRandom::shuffle` driven by `ChaCha8Rng::seed_from_u64(seed)`.
/// The first `⌊0.7n⌋` rows go to train, the next `⌊0.15n⌋` to validation,
/// the rest to test.
pub fn split_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    idx
}

/// Loads a CSV, splits it with a seeded shuffle, and standardizes every
/// column with training-split statistics.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema, seed: u64) -> Result<DatasetSplits> {
    if schema.num_classes == 0 {
        return Err(AfaError::Schema("num_classes must be >= 1".into()));
    }
    let (features, labels) = read_csv(path, schema)?;
    let n = labels.len();
    let perm = split_permutation(n, seed);
    let n_train = (schema.ratios.0 * n as f64).floor() as usize;
    let n_val = (schema.ratios.1 * n as f64).floor() as usize;
    let whole = TabularDataset::new(
        schema.name.clone(),
        Split::Train,
        features,
        labels,
        schema.num_classes,
    )?;
    let mut train = whole.subset(&perm[..n_train]);
    let mut val = whole.subset(&perm[n_train..n_train + n_val]);
    let mut test = whole.subset(&perm[n_train + n_val..]);
    val.split = Split::Val;
    test.split = Split::Test;
    let stats = Standardization::fit(&train.features);
    for ds in [&mut train, &mut val, &mut test] {
        ds.features = stats.apply(&ds.features);
    }
    DatasetSplits::assemble(
        schema.id,
        &schema.name,
        seed,
        train,
        val,
        test,
        Some(stats),
        None,
    )
}

/// Per-batch masking probability `p ~ U(low, high)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskingDistribution {
    pub low: f64,
    pub high: f64,
}

impl MaskingDistribution {
    pub const TABULAR: Self = Self { low: 0.0, high: 0.9 };
    pub const IMAGE: Self = Self {
        low: 0.75,
        high: 0.99,
    };

    pub fn new(low: f64, high: f64) -> Result<Self> {
        let d = Self { low, high };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if 0.0 <= self.low && self.low <= self.high && self.high < 1.0 {
            Ok(())
        } else {
            Err(AfaError::config(format!(
                "masking distribution needs 0 <= low <= high < 1, got ({}, {})",
                self.low, self.high
            )))
        }
    }

    pub fn sample_probability<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.high > self.low {
            rng.random_range(self.low..self.high)
        } else {
            self.low
        }
    }
}

/// Binary mask (1 = observed, 0 = masked). One masking probability is drawn
/// for the whole batch; every entry is masked independently with it.
pub fn sample_mask<R: Rng + ?Sized>(
    batch_size: usize,
    d: usize,
    dist: &MaskingDistribution,
    rng: &mut R,
) -> Matrix {
    let p = dist.sample_probability(rng);
    mask_with_probability(batch_size, d, p, rng)
}

pub fn mask_with_probability<R: Rng + ?Sized>(
    batch_size: usize,
    d: usize,
    p: f64,
    rng: &mut R,
) -> Matrix {
    let data = (0..batch_size * d)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 })
        .collect();
    Matrix::from_vec(batch_size, d, data).expect("sized above")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn cube_defaults_match_table_sizes() {
        let ds = generate_cube(&CubeSpec::default(), 0).unwrap();
        assert_eq!(ds.train.features.shape(), (700, 20));
        assert_eq!(ds.val.features.shape(), (150, 20));
        assert_eq!(ds.test.features.shape(), (150, 20));
        assert_eq!(ds.num_classes(), 8);
        assert!(ds.train.labels.iter().all(|&y| y < 8));
    }

    #[test]
    fn cube_zero_sigma_hits_bit_means() {
        let spec = CubeSpec {
            informative_sigma: 0.0,
            ..CubeSpec::default()
        };
        let ds = generate_cube(&spec, 4).unwrap();
        for (row, &k) in ds.train.features.iter_rows().zip(&ds.train.labels) {
            for (j, idx) in spec.informative(k).into_iter().enumerate() {
                assert_eq!(row[idx], cube_bit(k, j));
            }
        }
    }

    #[test]
    fn cube_informative_means_concentrate() {
        let spec = CubeSpec {
            sizes: [10_000, 0, 0],
            ..CubeSpec::default()
        };
        let ds = generate_cube(&spec, 11).unwrap();
        for k in 0..8 {
            let rows: Vec<usize> = (0..ds.train.len()).filter(|&i| ds.train.labels[i] == k).collect();
            let n = rows.len() as f64;
            let mean = rows.iter().map(|&i| ds.train.features[(i, k)]).sum::<f64>() / n;
            let tol = 3.0 * spec.informative_sigma / n.sqrt();
            assert!((mean - cube_bit(k, 0)).abs() < tol, "class {k}: {mean}");
        }
    }

    #[test]
    fn generation_is_bit_reproducible() {
        let a = generate_afacontext(&AfaContextSpec::default(), 5).unwrap();
        let b = generate_afacontext(&AfaContextSpec::default(), 5).unwrap();
        assert_eq!(a, b);
        let c = generate_afacontext(&AfaContextSpec::default(), 6).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn afacontext_layout() {
        let spec = AfaContextSpec::default();
        let ds = generate_afacontext(&spec, 0).unwrap();
        assert_eq!(ds.train.features.shape(), (700, 30));
        assert_eq!(ds.val.len(), 150);
        assert_eq!(ds.test.len(), 150);
        for row in ds.train.features.iter_rows() {
            assert_eq!(row[0] + row[1], 1.0);
            assert!(row[0] == 0.0 || row[0] == 1.0);
        }
    }

    #[test]
    fn afacontext_inactive_group_is_noise() {
        let spec = AfaContextSpec {
            sizes: [20_000, 0, 0],
            ..AfaContextSpec::default()
        };
        let ds = generate_afacontext(&spec, 2).unwrap();
        let rows: Vec<usize> = (0..ds.train.len()).filter(|&i| ds.train.features[(i, 0)] == 1.0).collect();
        let n = rows.len() as f64;
        for j in spec.group(1) {
            let vals: Vec<f64> = rows.iter().map(|&i| ds.train.features[(i, j)]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!((mean - 0.5).abs() < 4.0 * 0.3 / n.sqrt());
            assert!((var.sqrt() - 0.3).abs() < 0.01);
        }
    }

    #[test]
    fn masking_presets() {
        assert_eq!(DatasetId::Mnist.masking(), MaskingDistribution::new(0.75, 0.99).unwrap());
        assert_eq!(DatasetId::FashionMnist.masking(), MaskingDistribution::IMAGE);
        assert_eq!(DatasetId::Cube.masking(), MaskingDistribution::new(0.0, 0.9).unwrap());
        assert!(MaskingDistribution::new(0.5, 0.4).is_err());
        assert!(MaskingDistribution::new(0.0, 1.0).is_err());
    }

    #[test]
    fn mask_rate_matches_expected_probability() {
        let mut rng = seeded(0);
        let dist = MaskingDistribution::TABULAR;
        let mut masked = 0.0;
        let batches = 10_000;
        for _ in 0..batches {
            let m = sample_mask(1, 10, &dist, &mut rng);
            masked += m.as_slice().iter().filter(|&&v| v == 0.0).count() as f64;
        }
        let rate = masked / (batches * 10) as f64;
        assert!((0.43..=0.47).contains(&rate), "rate {rate}");
    }

    #[test]
    fn zero_masking_observes_everything() {
        let mut rng = seeded(1);
        let m = sample_mask(50, 7, &MaskingDistribution::new(0.0, 0.0).unwrap(), &mut rng);
        assert!(m.as_slice().iter().all(|&v| v == 1.0));
    }

    fn write_csv(dir: &Path, body: &str) -> std::path::PathBuf {
        let path = dir.join("data.csv");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn csv_split_follows_documented_shuffle() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("a,b,c,y\n");
        for i in 0..10 {
            body.push_str(&format!("{i},{},{},{}\n", i * 2, 7, i % 2));
        }
        let path = write_csv(dir.path(), &body);
        let ds = load_csv(&path, &CsvSchema::new("toy", "y", 2), 0).unwrap();
        assert_eq!(ds.manifest.sizes, [7, 1, 2]);

        // Replay: shuffle 0..10 with ChaCha8(0), then cut at 7 and 8.
        let mut order: Vec<usize> = (0..10).collect();
        order.shuffle(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0));
        let stats = ds.manifest.standardization.as_ref().unwrap();
        let raw_a = |row: &[f64]| row[0] * stats.stds[0] + stats.means[0];
        let got: Vec<usize> = ds
            .train
            .features
            .iter_rows()
            .chain(ds.val.features.iter_rows())
            .chain(ds.test.features.iter_rows())
            .map(|r| raw_a(r).round() as usize)
            .collect();
        assert_eq!(got, order);
        let train_mean = order[..7].iter().sum::<usize>() as f64 / 7.0;
        assert!((stats.means[0] - train_mean).abs() < 1e-12);
        // Constant column standardizes to zero.
        assert!(ds.train.features.iter_rows().all(|r| r[2] == 0.0));
        assert!(ds.test.features.iter_rows().all(|r| r[2] == 0.0));
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "a,b\n1,2\n");
        assert!(matches!(
            load_csv(&path, &CsvSchema::new("x", "label", 2), 0),
            Err(AfaError::Schema(_))
        ));
        let path = write_csv(dir.path(), "a,label\nfoo,1\n");
        assert!(matches!(
            load_csv(&path, &CsvSchema::new("x", "label", 2), 0),
            Err(AfaError::Schema(_))
        ));
        let path = write_csv(dir.path(), "a,label\n1.0,5\n");
        assert!(matches!(
            load_csv(&path, &CsvSchema::new("x", "label", 2), 0),
            Err(AfaError::Schema(_))
        ));
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CubeSpec {
            sizes: [30, 10, 10],
            ..CubeSpec::default()
        };
        let ds = generate_cube(&spec, 3).unwrap();
        ds.save(dir.path()).unwrap();
        let back = DatasetSplits::load(dir.path()).unwrap();
        assert_eq!(back, ds);
    }
}
