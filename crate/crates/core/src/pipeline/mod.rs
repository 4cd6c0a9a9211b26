//! Cross-validated experiments: stratified folds, the two training stages,
//! metrics, fold aggregation, Welch t-tests and report output.

mod config;
mod experiment;
mod folds;
mod metrics;
mod report;
mod train;
mod ttest;

pub use config::{ExperimentConfig, FusionStageConfig, HeadConfig, VitStageConfig};
pub use experiment::{
    compare_runs, load_cohort, plan_folds, run_experiment, run_experiment_to_dir, run_on_cohort, REPORT_FILE,
    TABLE_FILE, TIMING_FILE,
};
pub use folds::{stratified_kfold, stratified_kfold_by_site, Fold, FoldPlan};
pub use metrics::{compute_metrics, ConfusionMatrix, Metrics};
pub use report::{
    aggregate_folds, Comparison, ExperimentReport, FoldReport, FoldSummary, MetricStats, Prediction, RunReport,
    REPORT_SCHEMA_VERSION,
};
pub use train::{
    build_subject_graphs, evaluate, extract_embeddings, fit_harmonizer, harmonize_subjects, train_fold, train_fusion,
    train_vit, TrainedFold,
};
pub use ttest::{two_sample_ttest, TTest};
