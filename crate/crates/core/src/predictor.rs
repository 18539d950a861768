//! Masked-input classifiers and the shared pretrained predictor.
//!
//! A classifier sees `[values ⊙ mask ‖ mask]`, so an unobserved feature is a
//! zero value with a zero mask bit while an observed zero keeps its mask bit.

use std::fs;
use std::path::Path;

use nnkit::{softmax_rows, weighted_cross_entropy, Adam, AdamConfig, EarlyStopping, Matrix, Mlp, MlpConfig, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{mask_with_probability, sample_mask, DatasetSplits, MaskingDistribution, TabularDataset};
use crate::error::{AfaError, Result};
use crate::rng::{stream, Fingerprint, SeededRng};

/// One partially observed instance.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedInput {
    pub values: Vec<f64>,
    pub mask: Vec<f64>,
}

impl MaskedInput {
    /// Zeroes `values` wherever `mask` is 0.
    pub fn new(values: &[f64], mask: &[f64]) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(AfaError::config(format!(
                "values have length {} but mask has length {}",
                values.len(),
                mask.len()
            )));
        }
        Ok(Self {
            values: values.iter().zip(mask).map(|(v, m)| v * m).collect(),
            mask: mask.to_vec(),
        })
    }

    pub fn empty(d: usize) -> Self {
        Self {
            values: vec![0.0; d],
            mask: vec![0.0; d],
        }
    }

    pub fn full(values: &[f64]) -> Self {
        Self {
            values: values.to_vec(),
            mask: vec![1.0; values.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn to_matrices(&self) -> (Matrix, Matrix) {
        let d = self.len();
        (
            Matrix::from_vec(1, d, self.values.clone()).expect("row"),
            Matrix::from_vec(1, d, self.mask.clone()).expect("row"),
        )
    }
}

/// Network input `[values ⊙ mask ‖ mask]`.
pub fn encode(values: &Matrix, mask: &Matrix) -> Result<Matrix> {
    Ok(values.hadamard(mask)?.hcat(mask)?)
}

/// Anything that maps partially observed instances to class probabilities.
pub trait Classifier: Send + Sync {
    fn num_features(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// Row-wise class probabilities. `values` need not be pre-masked.
    fn predict_proba(&self, values: &Matrix, mask: &Matrix) -> Result<Matrix>;

    /// Probabilities used for certainty rewards. Deterministic unless the
    /// classifier has a stochastic estimate (MC dropout).
    fn certainty(&self, values: &Matrix, mask: &Matrix, _rng: &mut SeededRng) -> Result<Matrix> {
        self.predict_proba(values, mask)
    }

    /// Identity of the weights, used to check that methods share a predictor.
    fn fingerprint(&self) -> String;

    fn predict_one(&self, input: &MaskedInput) -> Result<Vec<f64>> {
        let (v, m) = input.to_matrices();
        Ok(self.predict_proba(&v, &m)?.into_vec())
    }
}

/// An MLP over `[values ⊙ mask ‖ mask]` producing class logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedClassifier {
    pub mlp: Mlp,
    /// Dropout passes averaged by [`Classifier::certainty`].
    pub certainty_passes: usize,
}

impl MaskedClassifier {
    pub fn new(
        num_features: usize,
        hidden: &[usize],
        num_classes: usize,
        dropout: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let cfg = MlpConfig::new(2 * num_features, hidden, num_classes).with_dropout(dropout);
        Ok(Self {
            mlp: Mlp::new(cfg, rng)?,
            certainty_passes: 10,
        })
    }

    pub fn logits(&self, values: &Matrix, mask: &Matrix) -> Result<Matrix> {
        Ok(self.mlp.forward(&encode(values, mask)?)?)
    }

    /// Mean of `passes` dropout-enabled softmax outputs.
    pub fn mc_dropout(
        &self,
        values: &Matrix,
        mask: &Matrix,
        passes: usize,
        rng: &mut SeededRng,
    ) -> Result<Matrix> {
        if passes == 0 {
            return Err(AfaError::config("MC dropout needs at least one pass"));
        }
        let input = encode(values, mask)?;
        let mut acc = Matrix::zeros(values.rows(), self.num_classes());
        for _ in 0..passes {
            acc.add_assign(&softmax_rows(&self.mlp.forward_mode(&input, true, rng)?))?;
        }
        acc.scale(1.0 / passes as f64);
        Ok(acc)
    }

    /// One Adam step on weighted cross-entropy. Returns the batch loss.
    pub fn train_step(
        &mut self,
        values: &Matrix,
        mask: &Matrix,
        labels: &[usize],
        class_weights: &[f64],
        adam: &mut Adam,
        rng: &mut SeededRng,
    ) -> Result<f64> {
        let input = encode(values, mask)?;
        let (logits, cache) = self.mlp.forward_cached(&input, Some(rng))?;
        let (loss, grad) = weighted_cross_entropy(&logits, labels, class_weights)?;
        if !loss.is_finite() {
            return Err(AfaError::Divergence(format!("classifier loss {loss}")));
        }
        let (grads, _) = self.mlp.backward(&cache, &grad)?;
        adam.step(self.mlp.params_mut(), grads.slices())?;
        Ok(loss)
    }
}

impl Classifier for MaskedClassifier {
    fn num_features(&self) -> usize {
        self.mlp.input_dim() / 2
    }

    fn num_classes(&self) -> usize {
        self.mlp.output_dim()
    }

    fn predict_proba(&self, values: &Matrix, mask: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.logits(values, mask)?))
    }

    fn certainty(&self, values: &Matrix, mask: &Matrix, rng: &mut SeededRng) -> Result<Matrix> {
        if self.mlp.config().dropout_rate == 0.0 {
            return self.predict_proba(values, mask);
        }
        self.mc_dropout(values, mask, self.certainty_passes, rng)
    }

    fn fingerprint(&self) -> String {
        let mut fp = Fingerprint::default();
        for p in self.mlp.params() {
            fp.f64s(p);
        }
        fp.hex()
    }
}

/// How training masks are drawn for each minibatch.
#[derive(Clone, Debug, PartialEq)]
pub enum MaskScheme {
    /// One masking probability per batch from the distribution.
    Random(MaskingDistribution),
    /// Each row observes a uniformly random subset (size uniform in
    /// `0..=max_size`) of `features`; everything else stays hidden.
    SubsetOf { features: Vec<usize>, max_size: usize },
}

impl MaskScheme {
    pub fn sample(&self, rows: usize, d: usize, rng: &mut SeededRng) -> Matrix {
        match self {
            MaskScheme::Random(dist) => sample_mask(rows, d, dist, rng),
            MaskScheme::SubsetOf { features, max_size } => {
                let mut m = Matrix::zeros(rows, d);
                let mut pool = features.clone();
                for r in 0..rows {
                    let size = rng.random_range(0..=(*max_size).min(pool.len()));
                    pool.shuffle(rng);
                    for &j in &pool[..size] {
                        m[(r, j)] = 1.0;
                    }
                }
                m
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Minibatch training of a masked classifier with early stopping on a fixed
/// validation mask. Returns the best-validation checkpoint.
pub fn train_masked_classifier(
    mut model: MaskedClassifier,
    train: &TabularDataset,
    val: &TabularDataset,
    scheme: &MaskScheme,
    val_mask: &Matrix,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<(MaskedClassifier, Vec<EpochRecord>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(AfaError::Dataset("empty training split".into()));
    }
    let d = train.num_features();
    let weights = class_weights(cfg, train);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut stopper = EarlyStopping::<MaskedClassifier>::new(cfg.early_stop_patience);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let m = scheme.sample(chunk.len(), d, rng);
            total += model.train_step(&x, &m, &y, &weights, &mut adam, rng)?;
            batches += 1;
        }
        let val_loss = if val.is_empty() {
            total / batches as f64
        } else {
            masked_loss(&model, &val.features, val_mask, &val.labels, &weights)?
        };
        if !val_loss.is_finite() {
            return Err(AfaError::Divergence(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / batches as f64,
            val_loss,
        });
        if stopper.observe(val_loss, &model) == nnkit::StopDecision::Stop {
            break;
        }
    }
    let best = stopper.into_best().unwrap_or(model);
    Ok((best, history))
}

/// Explicit class weights from the config, or inverse training frequencies.
pub fn class_weights(cfg: &TrainConfig, train: &TabularDataset) -> Vec<f64> {
    if cfg.class_weights.len() == train.num_classes {
        cfg.class_weights.clone()
    } else {
        TrainConfig::inverse_frequency_weights(&train.labels, train.num_classes)
    }
}

pub fn masked_loss(
    model: &MaskedClassifier,
    features: &Matrix,
    mask: &Matrix,
    labels: &[usize],
    weights: &[f64],
) -> Result<f64> {
    let logits = model.logits(features, mask)?;
    Ok(weighted_cross_entropy(&logits, labels, weights)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorManifest {
    pub dataset: String,
    pub dataset_fingerprint: String,
    pub seed: u64,
    pub masking: MaskingDistribution,
    pub val_mask_probability: f64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub epochs_run: usize,
    pub best_val_loss: f64,
    pub weights_fingerprint: String,
}

/// The single pretrained classifier every method is scored with in shared mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedPredictor {
    pub classifier: MaskedClassifier,
    pub manifest: PredictorManifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub train: TrainConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            dropout: 0.1,
            train: TrainConfig::default(),
        }
    }
}

pub fn pretrain_shared(
    data: &DatasetSplits,
    masking: &MaskingDistribution,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<SharedPredictor> {
    masking.validate()?;
    let mut rng = stream(seed, "shared-predictor");
    let model = MaskedClassifier::new(
        data.num_features(),
        &cfg.hidden,
        data.num_classes(),
        cfg.dropout,
        &mut rng,
    )?;
    let val_p = data.id().validation_mask_probability();
    let val_mask = mask_with_probability(
        data.val.len(),
        data.num_features(),
        val_p,
        &mut stream(seed, "shared-predictor-val-mask"),
    );
    let (classifier, history) = train_masked_classifier(
        model,
        &data.train,
        &data.val,
        &MaskScheme::Random(*masking),
        &val_mask,
        &cfg.train,
        &mut rng,
    )?;
    let best_val_loss = history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
    log::info!(
        "shared predictor for {}: {} epochs, best validation loss {best_val_loss:.4}",
        data.manifest.name,
        history.len()
    );
    let manifest = PredictorManifest {
        dataset: data.manifest.name.clone(),
        dataset_fingerprint: data.fingerprint().to_string(),
        seed,
        masking: *masking,
        val_mask_probability: val_p,
        hidden: cfg.hidden.clone(),
        dropout: cfg.dropout,
        epochs_run: history.len(),
        best_val_loss,
        weights_fingerprint: classifier.fingerprint(),
    };
    Ok(SharedPredictor { classifier, manifest })
}

impl SharedPredictor {
    /// Deterministic class probabilities for one instance.
    pub fn predict(&self, input: &MaskedInput) -> Result<Vec<f64>> {
        if input.len() != self.num_features() {
            return Err(AfaError::Nn(nnkit::NnError::DimensionMismatch {
                context: "SharedPredictor::predict",
                expected: self.num_features(),
                got: input.len(),
            }));
        }
        self.predict_one(input)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        if let Some(parent) = path.as_ref().parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(AfaError::MissingCheckpoint(path.display().to_string()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Fails unless this predictor was trained on `data`.
    pub fn check_dataset(&self, data: &DatasetSplits) -> Result<()> {
        if self.manifest.dataset_fingerprint != data.fingerprint() {
            return Err(AfaError::FingerprintMismatch {
                expected: data.fingerprint().to_string(),
                found: self.manifest.dataset_fingerprint.clone(),
            });
        }
        Ok(())
    }
}

impl Classifier for SharedPredictor {
    fn num_features(&self) -> usize {
        self.classifier.num_features()
    }

    fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    fn predict_proba(&self, values: &Matrix, mask: &Matrix) -> Result<Matrix> {
        self.classifier.predict_proba(values, mask)
    }

    fn certainty(&self, values: &Matrix, mask: &Matrix, rng: &mut SeededRng) -> Result<Matrix> {
        self.classifier.certainty(values, mask, rng)
    }

    fn fingerprint(&self) -> String {
        self.classifier.fingerprint()
    }
}

/// Average of `passes` dropout-enabled predictions for one instance.
pub fn mc_dropout_certainty(
    pred: &SharedPredictor,
    input: &MaskedInput,
    passes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let (v, m) = input.to_matrices();
    let mut rng = stream(seed, "mc-dropout");
    Ok(pred.classifier.mc_dropout(&v, &m, passes, &mut rng)?.into_vec())
}

/// Accuracy of `classifier` on `data` under `mask`.
pub fn masked_accuracy(classifier: &dyn Classifier, data: &TabularDataset, mask: &Matrix) -> Result<f64> {
    let probs = classifier.predict_proba(&data.features, mask)?;
    let hits = probs
        .argmax_rows()
        .iter()
        .zip(&data.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_cube, CubeSpec};
    use crate::rng::seeded;

    fn tiny_classifier(dropout: f64) -> MaskedClassifier {
        MaskedClassifier::new(4, &[8], 3, dropout, &mut seeded(0)).unwrap()
    }

    #[test]
    fn masked_input_zeroes_hidden_values() {
        let m = MaskedInput::new(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.values, vec![1.0, 0.0, 3.0]);
        assert!(MaskedInput::new(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn predictions_are_deterministic_distributions() {
        let c = tiny_classifier(0.3);
        let input = MaskedInput::new(&[0.2, -1.0, 0.5, 3.0], &[1.0, 1.0, 0.0, 1.0]).unwrap();
        let a = c.predict_one(&input).unwrap();
        let b = c.predict_one(&input).unwrap();
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hidden_values_do_not_leak() {
        let c = tiny_classifier(0.0);
        let a = MaskedInput::new(&[0.2, -1.0, 0.5, 3.0], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        let b = MaskedInput::new(&[0.2, 9.0, 0.5, -7.0], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(c.predict_one(&a).unwrap(), c.predict_one(&b).unwrap());
    }

    #[test]
    fn single_pass_without_dropout_equals_predict() {
        let c = tiny_classifier(0.0);
        let input = MaskedInput::new(&[0.2, -1.0, 0.5, 3.0], &[1.0; 4]).unwrap();
        let (v, m) = input.to_matrices();
        let mc = c.mc_dropout(&v, &m, 1, &mut seeded(3)).unwrap();
        assert_eq!(mc.into_vec(), c.predict_one(&input).unwrap());
    }

    #[test]
    fn mc_variance_shrinks_with_passes() {
        let c = tiny_classifier(0.5);
        let input = MaskedInput::new(&[1.0, -1.0, 0.5, 2.0], &[1.0; 4]).unwrap();
        let (v, m) = input.to_matrices();
        let mut rng = seeded(9);
        let variance = |passes: usize, rng: &mut SeededRng| {
            let draws: Vec<f64> = (0..400)
                .map(|_| c.mc_dropout(&v, &m, passes, rng).unwrap()[(0, 0)])
                .collect();
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64
        };
        let v1 = variance(1, &mut rng);
        let v16 = variance(16, &mut rng);
        let ratio = v1 / v16;
        assert!(v1 > 0.0);
        assert!((8.0..32.0).contains(&ratio), "variance ratio {ratio}");
    }

    #[test]
    fn subset_scheme_stays_inside_the_set() {
        let scheme = MaskScheme::SubsetOf {
            features: vec![1, 3],
            max_size: 2,
        };
        let m = scheme.sample(200, 5, &mut seeded(0));
        for row in m.iter_rows() {
            assert_eq!(row[0] + row[2] + row[4], 0.0);
        }
        assert!(m.as_slice().iter().any(|&v| v == 1.0));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let spec = CubeSpec {
            sizes: [64, 32, 32],
            ..CubeSpec::default()
        };
        let data = generate_cube(&spec, 0).unwrap();
        let cfg = PretrainConfig {
            hidden: vec![16],
            train: TrainConfig {
                max_epochs: 2,
                ..TrainConfig::default()
            },
            ..PretrainConfig::default()
        };
        let pred = pretrain_shared(&data, &MaskingDistribution::TABULAR, &cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.json");
        pred.save(&path).unwrap();
        let back = SharedPredictor::load(&path).unwrap();
        let mask = Matrix::filled(data.test.len(), 20, 1.0);
        assert_eq!(
            pred.predict_proba(&data.test.features, &mask).unwrap(),
            back.predict_proba(&data.test.features, &mask).unwrap()
        );
        assert_eq!(pred.fingerprint(), back.fingerprint());
        back.check_dataset(&data).unwrap();
    }
}
