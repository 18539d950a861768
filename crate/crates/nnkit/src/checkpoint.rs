//! Versioned JSON weight checkpoints.
//!
//! Layout: `{"format": "nnkit-mlp", "version": 1, "config": MlpConfig,
//! "layers": [{"weight": [..in*out row-major..], "bias": [..]}, ...]}`.
//! Floats are written in shortest round-trip form, so a save/load cycle
//! reproduces every weight bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::matrix::Matrix;
use crate::mlp::{Mlp, MlpConfig};

pub const FORMAT: &str = "nnkit-mlp";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: MlpConfig,
    pub layers: Vec<LayerWeights>,
}

impl MlpCheckpoint {
    pub fn from_mlp(mlp: &Mlp) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            config: mlp.config().clone(),
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerWeights {
                    weight: l.weight.as_slice().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn into_mlp(self) -> Result<Mlp> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut mlp = Mlp::zeros(self.config)?;
        if mlp.layers.len() != self.layers.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} layers, found {}",
                mlp.layers.len(),
                self.layers.len()
            )));
        }
        for (dst, src) in mlp.layers.iter_mut().zip(self.layers) {
            let (r, c) = dst.weight.shape();
            if src.bias.len() != c {
                return Err(NnError::Checkpoint("bias length mismatch".into()));
            }
            dst.weight = Matrix::from_vec(r, c, src.weight)?;
            dst.bias = src.bias;
        }
        if !mlp.all_finite() {
            return Err(NnError::NonFinite("checkpoint weights"));
        }
        Ok(mlp)
    }
}

impl Mlp {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MlpCheckpoint::from_mlp(self))?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str::<MlpCheckpoint>(json)?.into_mlp()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MlpCheckpoint::from_mlp(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        MlpCheckpoint::deserialize(d)?
            .into_mlp()
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(MlpConfig::new(6, &[7, 5], 3).with_dropout(0.1), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        mlp.save(&path).unwrap();
        let back = Mlp::load(&path).unwrap();
        assert_eq!(back, mlp);
        let x = Matrix::filled(2, 6, 0.3);
        let (a, b) = (mlp.forward(&x).unwrap(), back.forward(&x).unwrap());
        assert!(a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn rejects_wrong_version() {
        let mlp = Mlp::zeros(MlpConfig::new(2, &[], 2)).unwrap();
        let mut ck = MlpCheckpoint::from_mlp(&mlp);
        ck.version = 99;
        assert!(matches!(ck.into_mlp(), Err(NnError::Checkpoint(_))));
    }
}
