//! Command-line surface of the benchmark: dataset generation, predictor
//! pretraining, policy training, evaluation sweeps, SVG plots and markdown
//! reports. All paths resolve against a work directory.

pub mod commands;
pub mod plot;
pub mod report;
pub mod sweep;
