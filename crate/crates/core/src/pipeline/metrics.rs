use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Binary confusion counts; class 1 is the positive (patient) class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(predicted: &[usize], labels: &[usize]) -> Result<Self> {
        if predicted.len() != labels.len() {
            return Err(Error::Shape(format!("{} predictions for {} labels", predicted.len(), labels.len())));
        }
        let mut cm = ConfusionMatrix::default();
        for (&p, &y) in predicted.iter().zip(labels) {
            match (p, y) {
                (1, 1) => cm.tp += 1,
                (0, 0) => cm.tn += 1,
                (1, 0) => cm.fp += 1,
                (0, 1) => cm.fn_ += 1,
                _ => return Err(Error::LabelOutOfRange { label: p.max(y), classes: 2 }),
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// The five reported metrics; `None` marks a zero denominator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["accuracy", "sensitivity", "specificity", "precision", "f1"];

    pub fn values(&self) -> [Option<f64>; 5] {
        [self.accuracy, self.sensitivity, self.specificity, self.precision, self.f1]
    }

    pub fn get(&self, name: &str) -> Option<Option<f64>> {
        Self::NAMES.iter().position(|n| *n == name).map(|i| self.values()[i])
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Metrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let sensitivity = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Metrics {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        sensitivity,
        specificity: ratio(cm.tn, cm.tn + cm.fp),
        precision,
        f1,
    }
}
