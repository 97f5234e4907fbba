//! Experiment driver: configuration, the standard experiments, and output.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{CliOverrides, Experiment, ExperimentConfig, OUT_DIR_ENV};
pub use experiments::{
    run_convergence, run_custom, run_efficiency, run_stability, ConvergenceResult, CustomResult, EfficiencyResult,
    StabilityResult, StabilityRun,
};
