use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{compute_metrics, ConfusionMatrix, ExperimentConfig, Metrics, TTest};
use crate::fusion::FusionVariant;
use crate::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Test-split prediction of one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: usize,
    pub predicted: usize,
    /// Probability of the positive class.
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub variant: FusionVariant,
    pub train_size: usize,
    pub test_size: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub predictions: Vec<Prediction>,
    /// Epoch-mean training loss of the ViT stage.
    pub vit_loss: Vec<f64>,
    /// Epoch-mean training loss of the fusion stage.
    pub fusion_loss: Vec<f64>,
}

impl FoldReport {
    pub fn from_predictions(
        fold: usize,
        variant: FusionVariant,
        train_size: usize,
        predictions: Vec<Prediction>,
        vit_loss: Vec<f64>,
        fusion_loss: Vec<f64>,
    ) -> Result<Self> {
        let predicted: Vec<usize> = predictions.iter().map(|p| p.predicted).collect();
        let labels: Vec<usize> = predictions.iter().map(|p| p.label).collect();
        let confusion = ConfusionMatrix::from_predictions(&predicted, &labels)?;
        Ok(FoldReport {
            fold,
            variant,
            train_size,
            test_size: predictions.len(),
            confusion,
            metrics: compute_metrics(&confusion),
            predictions,
            vit_loss,
            fusion_loss,
        })
    }
}

/// Cross-fold statistics of one metric over the folds where it is defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Folds where the metric was undefined and therefore left out.
    pub undefined: usize,
}

impl MetricStats {
    pub fn from_values(values: &[Option<f64>]) -> Self {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let undefined = values.len() - defined.len();
        if defined.is_empty() {
            return MetricStats { mean: None, std: None, min: None, max: None, undefined };
        }
        let n = defined.len() as f64;
        let mean = defined.iter().sum::<f64>() / n;
        let var = defined.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MetricStats {
            mean: Some(mean),
            std: Some(var.sqrt()),
            min: defined.iter().copied().reduce(f64::min),
            max: defined.iter().copied().reduce(f64::max),
            undefined,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub accuracy: MetricStats,
    pub sensitivity: MetricStats,
    pub specificity: MetricStats,
    pub precision: MetricStats,
    pub f1: MetricStats,
    /// Highest accuracy, ties broken by the lower fold index.
    pub best_fold: usize,
}

impl FoldSummary {
    pub fn get(&self, metric: &str) -> Option<&MetricStats> {
        match metric {
            "accuracy" => Some(&self.accuracy),
            "sensitivity" => Some(&self.sensitivity),
            "specificity" => Some(&self.specificity),
            "precision" => Some(&self.precision),
            "f1" => Some(&self.f1),
            _ => None,
        }
    }

    pub fn stats(&self) -> [&MetricStats; 5] {
        [&self.accuracy, &self.sensitivity, &self.specificity, &self.precision, &self.f1]
    }
}

pub fn aggregate_folds(folds: &[FoldReport]) -> Result<FoldSummary> {
    if folds.is_empty() {
        return Err(Error::Insufficient("no folds to aggregate".into()));
    }
    let column = |i: usize| -> Vec<Option<f64>> { folds.iter().map(|f| f.metrics.values()[i]).collect() };
    let mut best = 0;
    for (i, f) in folds.iter().enumerate() {
        let acc = f.metrics.accuracy.unwrap_or(f64::NEG_INFINITY);
        if acc > folds[best].metrics.accuracy.unwrap_or(f64::NEG_INFINITY) {
            best = i;
        }
    }
    Ok(FoldSummary {
        accuracy: MetricStats::from_values(&column(0)),
        sensitivity: MetricStats::from_values(&column(1)),
        specificity: MetricStats::from_values(&column(2)),
        precision: MetricStats::from_values(&column(3)),
        f1: MetricStats::from_values(&column(4)),
        best_fold: folds[best].fold,
    })
}

/// Cross-validated result of one fusion variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub variant: FusionVariant,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub folds: Vec<FoldReport>,
    pub summary: FoldSummary,
}

impl RunReport {
    pub fn new(variant: FusionVariant, config: &ExperimentConfig, mut folds: Vec<FoldReport>) -> Result<Self> {
        folds.sort_by_key(|f| f.fold);
        let summary = aggregate_folds(&folds)?;
        Ok(RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            variant,
            seed: config.seed,
            config: config.clone(),
            folds,
            summary,
        })
    }

    pub fn best(&self) -> &FoldReport {
        self.folds
            .iter()
            .find(|f| f.fold == self.summary.best_fold)
            .expect("best fold is one of the folds")
    }

    /// Per-fold values of `metric`, in fold order; undefined entries are skipped.
    pub fn metric_values(&self, metric: &str) -> Result<Vec<f64>> {
        if !Metrics::NAMES.contains(&metric) {
            return Err(Error::InvalidArgument(format!("unknown metric '{metric}'")));
        }
        Ok(self.folds.iter().filter_map(|f| f.metrics.get(metric).flatten()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: FusionVariant,
    pub b: FusionVariant,
    pub metric: String,
    pub test: TTest,
}

/// All variants of one experiment plus their pairwise accuracy t-tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub runs: Vec<RunReport>,
    pub comparisons: Vec<Comparison>,
}

impl ExperimentReport {
    pub fn run(&self, variant: FusionVariant) -> Option<&RunReport> {
        self.runs.iter().find(|r| r.variant == variant)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::numerics::ngt::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: ExperimentReport =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion { found: r.schema_version, expected: REPORT_SCHEMA_VERSION });
        }
        Ok(r)
    }

    /// Aligned text tables: mean ± std per variant, the best fold of each
    /// variant, and the t-tests.
    pub fn table(&self) -> String {
        let header = ["Method", "Accuracy", "Sensitivity", "Specificity", "Precision", "F1-score"];
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
        let mut rows = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
        let mut notes = Vec::new();
        for r in &self.runs {
            let mut row = vec![r.variant.name().to_string()];
            for (name, s) in Metrics::NAMES.iter().zip(r.summary.stats()) {
                let cell = match (s.mean, s.std) {
                    (Some(m), Some(sd)) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * sd),
                    _ => "n/a".to_string(),
                };
                if s.undefined > 0 {
                    notes.push(format!("{} {name}: undefined in {} fold(s), excluded", r.variant, s.undefined));
                    row.push(format!("{cell}*"));
                } else {
                    row.push(cell);
                }
            }
            rows.push(row);
        }
        let mut out = String::from("Average ± standard deviation (%)\n");
        out.push_str(&align(&rows));
        for n in notes {
            let _ = writeln!(out, "* {n}");
        }

        let mut best = vec![["Method", "Fold", "Accuracy", "Sensitivity", "Specificity", "Precision", "F1-score"]
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()];
        for r in &self.runs {
            let f = r.best();
            let mut row = vec![r.variant.name().to_string(), f.fold.to_string()];
            row.extend(f.metrics.values().iter().map(|v| pct(*v)));
            best.push(row);
        }
        out.push_str("\nFold with the highest accuracy (%)\n");
        out.push_str(&align(&best));

        if !self.comparisons.is_empty() {
            let mut rows = vec![["A", "B", "Metric", "t", "df", "p"].iter().map(|s| s.to_string()).collect::<Vec<_>>()];
            for c in &self.comparisons {
                rows.push(vec![
                    c.a.name().into(),
                    c.b.name().into(),
                    c.metric.clone(),
                    format!("{:.3}", c.test.t),
                    format!("{:.2}", c.test.df),
                    format!("{:.4}", c.test.p),
                ]);
            }
            out.push_str("\nWelch two-sample t-tests\n");
            out.push_str(&align(&rows));
        }
        out
    }
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s}{}", " ".repeat(widths[c] - s.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (cols.saturating_sub(1));
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}
