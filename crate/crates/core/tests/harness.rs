//! Artifact store and experiment runner, end to end on CUBE.

use afabench::datasets::DatasetId;
use afabench::harness::{
    run_cell, run_experiment, ArtifactStore, CellSpec, ClassifierMode, ExperimentConfig, MethodId,
    MethodSettings, PolicyCheckpoint, Scale,
};
use afabench::AfaError;

fn settings(store: &ArtifactStore) -> MethodSettings {
    let d = store.dataset(DatasetId::Cube, 0).unwrap().num_features();
    let mut s = MethodSettings::preset(DatasetId::Cube, d, Scale::Desk);
    s.cae.epochs = 3;
    s.cae.predictor.max_epochs = 3;
    s.permutation_repeats = 1;
    s
}

fn cell(method: MethodId, mode: ClassifierMode) -> CellSpec {
    CellSpec {
        dataset: DatasetId::Cube,
        method,
        classifier_mode: mode,
        budget: 4,
        seed: 1,
        split: 0,
    }
}

#[test]
fn checkpoints_are_reused_without_retraining() {
    let tmp = tempfile::tempdir().unwrap();
    let store = ArtifactStore::at(tmp.path());
    let s = settings(&store);
    let c = cell(MethodId::PtS, ClassifierMode::Shared);
    let (first, transcripts) = run_cell(&store, &c, &s).unwrap();
    assert!(store.policy_path(&c).unwrap().exists());
    assert!(store.predictor_path(DatasetId::Cube, 0).unwrap().exists());

    let mut reload = ArtifactStore::at(tmp.path());
    reload.train_missing = false;
    let (second, again) = run_cell(&reload, &c, &s).unwrap();
    assert_eq!(first.curve, second.curve);
    assert_eq!(transcripts, again);
    assert_eq!(first.shared_fingerprint, second.shared_fingerprint);
}

#[test]
fn missing_checkpoints_fail_when_training_is_disabled() {
    let tmp = tempfile::tempdir().unwrap();
    let mut store = ArtifactStore::at(tmp.path());
    store.train_missing = false;
    let s = MethodSettings::preset(DatasetId::Cube, 20, Scale::Desk);
    let err = run_cell(&store, &cell(MethodId::PtS, ClassifierMode::Shared), &s).unwrap_err();
    assert!(matches!(err, AfaError::MissingCheckpoint(_)), "{err}");
}

#[test]
fn checkpoint_for_other_data_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let store = ArtifactStore::at(tmp.path());
    let s = settings(&store);
    let c = cell(MethodId::PtS, ClassifierMode::Shared);
    store.policy(&c, &s).unwrap();
    let path = store.policy_path(&c).unwrap();
    let mut ck: PolicyCheckpoint = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    ck.dataset_fingerprint = "0000000000000000".into();
    std::fs::write(&path, serde_json::to_string(&ck).unwrap()).unwrap();
    let err = store.policy(&c, &s).unwrap_err();
    assert!(matches!(err, AfaError::FingerprintMismatch { .. }), "{err}");
}

#[test]
fn builtin_mode_scores_with_the_method_classifier() {
    let store = ArtifactStore::in_memory();
    let s = settings(&store);
    let (shared, _) = run_cell(&store, &cell(MethodId::CaeS, ClassifierMode::Shared), &s).unwrap();
    let (builtin, _) = run_cell(&store, &cell(MethodId::CaeS, ClassifierMode::Builtin), &s).unwrap();
    assert_eq!(shared.scoring_fingerprint, shared.shared_fingerprint);
    assert_ne!(builtin.scoring_fingerprint, builtin.shared_fingerprint);

    // Without a built-in classifier, builtin mode falls back to the shared one.
    let (random, _) = run_cell(&store, &cell(MethodId::Random, ClassifierMode::Builtin), &s).unwrap();
    assert_eq!(random.scoring_fingerprint, random.shared_fingerprint);
}

#[test]
fn oracle_only_runs_on_afacontext() {
    let store = ArtifactStore::in_memory();
    let s = settings(&store);
    let err = run_cell(&store, &cell(MethodId::Oracle, ClassifierMode::Shared), &s).unwrap_err();
    assert!(matches!(err, AfaError::WrongDataset { .. }), "{err}");
}

#[test]
fn experiment_curve_averages_its_cells() {
    let store = ArtifactStore::in_memory();
    let mut cfg = ExperimentConfig::new(DatasetId::Cube, MethodId::Random, 5);
    cfg.seeds = vec![0, 1];
    cfg.splits = vec![0];
    let out = run_experiment(&cfg, &store).unwrap();
    assert_eq!(out.cells.len(), 2);
    assert_eq!(out.curve.n_runs, 2);
    assert_eq!(out.curve.budget(), 5);
    for t in 0..5 {
        let want = (out.cells[0].curve[t] + out.cells[1].curve[t]) / 2.0;
        assert!((out.curve.mean[t] - want).abs() < 1e-12);
    }
    for transcripts in &out.transcripts {
        assert!(transcripts.iter().all(|t| t.has_distinct_actions(5)));
    }
}
