//! Experiment configuration, orchestration and output.

pub mod config;
pub mod experiment;
pub mod signal;
pub mod svg;

pub use config::{load_config, parse_config, ExperimentConfig, Resolved};
pub use experiment::{
    design_stage, run_baseline, run_experiment, sample_measurements, validate_design, write_artifacts, DesignFile,
    ExperimentOutput, Summary, ValidationSummary,
};
pub use signal::{LearningSignal, Signal};
