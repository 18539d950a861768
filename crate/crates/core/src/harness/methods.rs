//! Method registry: identifiers, per-method settings presets, training and
//! serializable trained policies.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::oracle::LookaheadOracle;
use crate::aaco::{AacoConfig, AacoPolicy};
use crate::datasets::{AfaContextSpec, DatasetId, DatasetSplits, GeneratorSpec};
use crate::error::{AfaError, Result};
use crate::greedy::{
    train_dime, train_gdfs, train_pvae, DimeConfig, DimeModel, DimePolicy, EddiPolicy, GdfsConfig,
    GdfsModel, GdfsPolicy, Pvae, PvaeConfig, DEFAULT_MC_SAMPLES,
};
use crate::policy::{Policy, RandomPolicy};
use crate::predictor::{Classifier, MaskedClassifier, PretrainConfig, SharedPredictor};
use crate::rl::{
    train_jafa, train_ol, train_odin, JafaConfig, JafaPolicy, OdinPolicy, OlConfig, OlPolicy,
    PpoConfig, TrainingRecord,
};
use crate::static_policies::{
    permutation_importance, static_eval_order, train_cae, CaeConfig, StaticMethod, StaticPolicy,
    DEFAULT_PERMUTATION_REPEATS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodId {
    Random,
    Eddi,
    Gdfs,
    Dime,
    Jafa,
    Ol,
    OdinMfrl,
    OdinMbrl,
    Aaco,
    PtS,
    CaeS,
    Oracle,
}

impl MethodId {
    pub const ALL: [MethodId; 12] = [
        MethodId::Random,
        MethodId::Eddi,
        MethodId::Gdfs,
        MethodId::Dime,
        MethodId::Jafa,
        MethodId::Ol,
        MethodId::OdinMfrl,
        MethodId::OdinMbrl,
        MethodId::Aaco,
        MethodId::PtS,
        MethodId::CaeS,
        MethodId::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Random => "random",
            MethodId::Eddi => "eddi",
            MethodId::Gdfs => "gdfs",
            MethodId::Dime => "dime",
            MethodId::Jafa => "jafa",
            MethodId::Ol => "ol",
            MethodId::OdinMfrl => "odin-mfrl",
            MethodId::OdinMbrl => "odin-mbrl",
            MethodId::Aaco => "aaco",
            MethodId::PtS => "pt-s",
            MethodId::CaeS => "cae-s",
            MethodId::Oracle => "oracle",
        }
    }

    pub fn is_greedy(self) -> bool {
        matches!(self, MethodId::Eddi | MethodId::Gdfs | MethodId::Dime)
    }

    pub fn is_rl(self) -> bool {
        matches!(
            self,
            MethodId::Jafa | MethodId::Ol | MethodId::OdinMfrl | MethodId::OdinMbrl
        )
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = AfaError;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| AfaError::config(format!("unknown method '{s}'")))
    }
}

/// Training effort: `Full` uses the published hyperparameters, `Desk` cuts
/// iteration counts so a whole sweep fits on one CPU.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    #[default]
    Full,
}

impl FromStr for Scale {
    type Err = AfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(AfaError::config(format!("unknown scale '{other}'"))),
        }
    }
}

/// Hyperparameters for every method on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    pub pretrain: PretrainConfig,
    pub pvae: PvaeConfig,
    pub eddi_mc_samples: usize,
    pub gdfs: GdfsConfig,
    pub dime: DimeConfig,
    pub jafa: JafaConfig,
    pub ol: OlConfig,
    pub ppo: PpoConfig,
    pub aaco: AacoConfig,
    pub cae: CaeConfig,
    pub permutation_repeats: usize,
}

impl MethodSettings {
    pub fn preset(id: DatasetId, num_features: usize, scale: Scale) -> Self {
        let image = id.is_image_like();
        let masking = id.masking();
        let mut s = Self {
            pretrain: PretrainConfig::default(),
            pvae: PvaeConfig::for_dataset(id),
            eddi_mc_samples: DEFAULT_MC_SAMPLES,
            gdfs: GdfsConfig {
                masking,
                ..GdfsConfig::default()
            },
            dime: DimeConfig {
                masking,
                ..DimeConfig::default()
            },
            jafa: JafaConfig::preset(num_features, image),
            ol: OlConfig::preset(num_features, image),
            ppo: PpoConfig::default(),
            aaco: AacoConfig::default(),
            cae: CaeConfig::default(),
            permutation_repeats: DEFAULT_PERMUTATION_REPEATS,
        };
        if scale == Scale::Desk {
            s.gdfs.max_epochs_per_stage = 40;
            s.gdfs.patience = 5;
            s.dime.max_epochs = 80;
            s.pvae.max_epochs = 100;
            s.jafa.dqn.agents = 32;
            s.jafa.dqn.batch_size = 128;
            s.jafa.dqn.num_batches = 3000;
            s.jafa.dqn.eval_every = 250;
            s.ppo.num_updates = 600;
            s.aaco.n_samples = 200;
            s.cae.epochs = 100;
        }
        s
    }
}

/// A trained method in a form that can be written to disk and turned back
/// into a [`Policy`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrainedPolicy {
    Random,
    Oracle { spec: AfaContextSpec },
    Eddi { pvae: Pvae, mc_samples: usize },
    Gdfs { model: GdfsModel },
    Dime { model: DimeModel },
    Jafa { policy: JafaPolicy },
    Ol { policy: OlPolicy },
    Odin { policy: OdinPolicy },
    Aaco { config: AacoConfig },
    Static {
        name: String,
        order: Vec<usize>,
        predictor: Option<MaskedClassifier>,
    },
}

/// Output of [`train_method`].
pub struct Trained {
    pub policy: TrainedPolicy,
    pub history: Vec<TrainingRecord>,
    pub warnings: Vec<String>,
}

/// Trains `method` for budget `budget` on `data`.
pub fn train_method(
    method: MethodId,
    data: &DatasetSplits,
    shared: &Arc<SharedPredictor>,
    budget: usize,
    settings: &MethodSettings,
    seed: u64,
) -> Result<Trained> {
    let d = data.num_features();
    if budget == 0 || budget > d {
        return Err(AfaError::BudgetTooLarge { budget, features: d });
    }
    let shared_dyn: Arc<dyn Classifier> = shared.clone();
    let mut history = Vec::new();
    let mut warnings = Vec::new();
    let pvae = |cfg: &PvaeConfig| train_pvae(data, &data.id().masking(), cfg, seed);
    let policy = match method {
        MethodId::Random => TrainedPolicy::Random,
        MethodId::Oracle => match &data.manifest.generator {
            Some(GeneratorSpec::AfaContext(spec)) => TrainedPolicy::Oracle { spec: spec.clone() },
            _ => {
                return Err(AfaError::WrongDataset {
                    expected: "afacontext".into(),
                    found: data.manifest.name.clone(),
                })
            }
        },
        MethodId::Eddi => TrainedPolicy::Eddi {
            pvae: pvae(&settings.pvae)?,
            mc_samples: settings.eddi_mc_samples,
        },
        MethodId::Gdfs => TrainedPolicy::Gdfs {
            model: train_gdfs(data, &settings.gdfs, seed)?,
        },
        MethodId::Dime => TrainedPolicy::Dime {
            model: train_dime(data, &settings.dime, seed)?,
        },
        MethodId::Jafa => {
            let (policy, h) = train_jafa(data, budget, &settings.jafa, seed)?;
            history = h;
            TrainedPolicy::Jafa { policy }
        }
        MethodId::Ol => {
            let (policy, h) = train_ol(data, budget, &settings.ol, seed)?;
            history = h;
            TrainedPolicy::Ol { policy }
        }
        MethodId::OdinMfrl | MethodId::OdinMbrl => {
            let model = if method == MethodId::OdinMbrl {
                Some(Arc::new(pvae(&settings.pvae)?))
            } else {
                None
            };
            let (policy, h) = train_odin(data, budget, shared_dyn, model, &settings.ppo, seed)?;
            history = h;
            if policy.entropy_collapse_warning {
                warnings.push("policy entropy collapsed during training".to_string());
            }
            TrainedPolicy::Odin { policy }
        }
        MethodId::Aaco => TrainedPolicy::Aaco {
            config: settings.aaco.clone(),
        },
        MethodId::PtS => {
            let ranking = permutation_importance(
                shared.as_ref(),
                &data.train,
                &data.val,
                settings.permutation_repeats,
                seed,
            )?;
            TrainedPolicy::Static {
                name: method.as_str().into(),
                order: static_eval_order(StaticMethod::PermutationImportance, &ranking.order, budget, seed)?,
                predictor: None,
            }
        }
        MethodId::CaeS => {
            let cfg = CaeConfig {
                budgets: vec![budget],
                ..settings.cae.clone()
            };
            let mut selection = train_cae(data, budget, &cfg, seed)?;
            if selection.duplicate_heads {
                warnings.push("concrete selector heads collided; duplicates were filled".to_string());
            }
            TrainedPolicy::Static {
                name: method.as_str().into(),
                order: static_eval_order(StaticMethod::ConcreteAutoencoder, &selection.features, budget, seed)?,
                predictor: selection.predictors.remove(&budget),
            }
        }
    };
    Ok(Trained {
        policy,
        history,
        warnings,
    })
}

impl TrainedPolicy {
    /// A runnable policy. Policies that score with a fixed predictor use
    /// `shared`.
    pub fn instantiate(&self, data: &DatasetSplits, shared: &Arc<SharedPredictor>) -> Result<Box<dyn Policy>> {
        let shared_dyn: Arc<dyn Classifier> = shared.clone();
        Ok(match self {
            TrainedPolicy::Random => Box::new(RandomPolicy),
            TrainedPolicy::Oracle { spec } => Box::new(LookaheadOracle::new(spec.clone())),
            TrainedPolicy::Eddi { pvae, mc_samples } => Box::new(EddiPolicy {
                pvae: Arc::new(pvae.clone()),
                predictor: shared_dyn,
                mc_samples: *mc_samples,
            }),
            TrainedPolicy::Gdfs { model } => Box::new(GdfsPolicy {
                model: Arc::new(model.clone()),
            }),
            TrainedPolicy::Dime { model } => Box::new(DimePolicy {
                model: Arc::new(model.clone()),
            }),
            TrainedPolicy::Jafa { policy } => Box::new(policy.clone()),
            TrainedPolicy::Ol { policy } => Box::new(policy.clone()),
            TrainedPolicy::Odin { policy } => Box::new(policy.clone()),
            TrainedPolicy::Aaco { config } => Box::new(AacoPolicy::new(&data.train, shared_dyn, config.clone())?),
            TrainedPolicy::Static { name, order, predictor } => Box::new(StaticPolicy {
                name: name.clone(),
                order: order.clone(),
                classifier: predictor.clone().map(Arc::new),
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_ids_round_trip() {
        for m in MethodId::ALL {
            assert_eq!(m.as_str().parse::<MethodId>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
        assert!("bogus".parse::<MethodId>().is_err());
    }

    #[test]
    fn desk_scale_only_shrinks_iteration_counts() {
        let full = MethodSettings::preset(DatasetId::Cube, 20, Scale::Full);
        let desk = MethodSettings::preset(DatasetId::Cube, 20, Scale::Desk);
        assert_eq!(full.jafa.dqn.num_batches, 10_000);
        assert!(desk.jafa.dqn.num_batches < full.jafa.dqn.num_batches);
        assert_eq!(desk.jafa.dqn.target, full.jafa.dqn.target);
        assert_eq!(desk.pretrain, full.pretrain);
        assert_eq!(desk.ppo.entropy_coef, 0.01);
    }
}
