//! Benchmark engine: experiment configuration, the seed × split sweep,
//! shared-versus-builtin scoring, budget curves and result files.

pub mod curve;
pub mod experiment;
pub mod methods;
pub mod metric;
pub mod oracle;
pub mod results;

pub use curve::{check_transcripts, replay_curve, transcripts_from_states, BudgetCurve};
pub use experiment::{
    run_cell, run_experiment, write_cell, ArtifactStore, BudgetPreset, CellResult, CellSpec,
    ClassifierMode, ExperimentConfig, ExperimentOutcome, PolicyCheckpoint,
};
pub use methods::{train_method, MethodId, MethodSettings, Scale, Trained, TrainedPolicy};
pub use metric::{metric, MetricKind};
pub use oracle::{oracle_afacontext, LookaheadOracle};
pub use results::{aggregate_cells, read_cells, read_csv, write_csv, CurveRow, MetricRow, TimingRow};
