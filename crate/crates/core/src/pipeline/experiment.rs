use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{
    stratified_kfold, stratified_kfold_by_site, train_fold, two_sample_ttest, Comparison, ExperimentConfig,
    ExperimentReport, FoldPlan, RunReport, REPORT_SCHEMA_VERSION,
};
use crate::dataio::{synthesize_cohort, Cohort};
use crate::numerics::ngt::write_atomic;
use crate::{Error, Result};

pub const REPORT_FILE: &str = "run_report.json";
pub const TABLE_FILE: &str = "report.txt";
pub const TIMING_FILE: &str = "timing.json";

/// Loads the configured manifest, or synthesizes the configured cohort.
pub fn load_cohort(config: &ExperimentConfig) -> Result<Cohort> {
    match &config.manifest {
        Some(path) => Cohort::load(path).map_err(|e| e.in_stage("load")),
        None => synthesize_cohort(&config.cohort).map_err(|e| e.in_stage("generate")),
    }
}

pub fn plan_folds(cohort: &Cohort, config: &ExperimentConfig) -> Result<FoldPlan> {
    let plan = if config.stratify_by_site {
        stratified_kfold_by_site(&cohort.records, config.folds, config.seed)
    } else {
        stratified_kfold(&cohort.records, config.folds, config.seed)
    };
    plan.map_err(|e| e.in_stage("folds"))
}

/// Cross-validates every configured variant on `cohort` and adds Welch
/// t-tests of fold accuracy for every pair of variants.
pub fn run_on_cohort(cohort: &Cohort, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let plan = plan_folds(cohort, config)?;
    let trained: Vec<_> = (0..plan.k)
        .into_par_iter()
        .map(|f| train_fold(cohort, &plan, f, config).map(|t| t.reports))
        .collect::<Result<_>>()?;
    let mut runs = Vec::new();
    for (v, &variant) in config.variants.iter().enumerate() {
        let folds = trained.iter().map(|r| r[v].clone()).collect();
        runs.push(RunReport::new(variant, config, folds).map_err(|e| e.in_stage("report"))?);
    }
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        comparisons: compare_runs(&runs, "accuracy")?,
        runs,
    })
}

/// Welch t-tests of `metric` for each pair of runs in order. Pairs whose
/// test is undefined (zero variance in both) are left out.
pub fn compare_runs(runs: &[RunReport], metric: &str) -> Result<Vec<Comparison>> {
    let mut out = Vec::new();
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            match two_sample_ttest(&a.metric_values(metric)?, &b.metric_values(metric)?) {
                Ok(test) => out.push(Comparison { a: a.variant, b: b.variant, metric: metric.to_string(), test }),
                Err(e) => log::warn!("no {metric} t-test for {} vs {}: {e}", a.variant, b.variant),
            }
        }
    }
    Ok(out)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    run_on_cohort(&load_cohort(config)?, config)
}

#[derive(Serialize)]
struct Timing {
    total_seconds: f64,
    threads: usize,
}

/// Runs the experiment and writes the JSON report, the text table and a
/// `timing.json` sidecar (kept out of the report so it stays reproducible).
pub fn run_experiment_to_dir(config: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    let start = Instant::now();
    let report = run_experiment(config)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    report.save(&out.join(REPORT_FILE))?;
    write_atomic(&out.join(TABLE_FILE), report.table().as_bytes())?;
    let timing = Timing { total_seconds: start.elapsed().as_secs_f64(), threads: rayon::current_num_threads() };
    write_atomic(&out.join(TIMING_FILE), &serde_json::to_vec_pretty(&timing)?)?;
    Ok(report)
}
