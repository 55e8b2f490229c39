//! Orchestration of the focal-stack depth experiments: dataset synthesis,
//! training and evaluation of the single-image and focal-stack networks, the
//! classical shape-from-focus baseline, and reports with heat-map figures.

pub mod compare;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod figures;
pub mod report;

pub use config::{BenchConfig, DatasetConfig, InputNorm, Mode};
pub use error::{BenchError, Result};
pub use experiment::{run_experiment, ExperimentConfig};
pub use report::EvalReport;
