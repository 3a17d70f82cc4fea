//! Simulation settings, Monte Carlo study drivers and their metrics.

mod settings;
mod study;

pub use settings::{ar_covariance, true_value, Generator, Setting, TestSet};
pub use study::{
    alpha_sensitivity, consistency_grid, consistency_probe, double_robustness, q_linear_recommend, run_study,
    AlphaAgreement, AlphaReport, Coverage, ReplicateRecord, RobustnessReport, StudyConfig, StudyMetrics, Summary,
    MAX_STUDY_FAILURE_RATE,
};
