//! Synthetic comparison scenarios, a permutation-test baseline, and ROC/AUC
//! replication studies.

mod permutation;
mod roc;
mod scenarios;

pub use permutation::fnp_permutation_test;
pub use roc::{
    auc_mann_whitney, bandwidth_sweep, kernel_sweep, roc_from_scores, roc_study, run_roc_study, run_roc_study_permutation,
    threshold_grid, trapezoid_auc, BandwidthPoint, KernelSweepPoint, RocCurve, StudyScores, DEFAULT_THRESHOLDS,
};
pub use scenarios::{null_model, sample_scenario, Scenario, ScenarioSampler, ScenarioSpec};
