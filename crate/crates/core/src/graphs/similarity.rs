use serde::{Deserialize, Serialize};

use crate::dataio::RoiTimeSeries;
use crate::numerics::{Scalar, Tensor};
use crate::{Error, Result};

/// |r| is clamped to `1 − FISHER_CLAMP` before the Fisher transform.
pub const FISHER_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Cosine,
    Correlation,
    FisherZ,
}

/// Symmetric `N × N` similarity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub kind: SimilarityKind,
    pub values: Tensor<f64>,
}

impl SimilarityMatrix {
    pub fn new(kind: SimilarityKind, values: Tensor<f64>) -> Result<Self> {
        if values.rank() != 2 || values.rows() != values.cols() {
            return Err(Error::Shape(format!("similarity matrix must be square, got {:?}", values.shape())));
        }
        values.check_finite("similarity matrix")?;
        let n = values.rows();
        for i in 0..n {
            for j in 0..i {
                if (values.get2(i, j) - values.get2(j, i)).abs() > 1e-8 {
                    return Err(Error::InvalidArgument(format!("similarity matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(SimilarityMatrix { kind, values })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get2(i, j)
    }
}

/// Pairwise cosine similarity of embedding rows, with unit diagonal.
pub fn cosine_similarity_matrix<T: Scalar>(embeddings: &Tensor<T>) -> Result<SimilarityMatrix> {
    if embeddings.rank() != 2 {
        return Err(Error::Shape(format!("embeddings must be N×d, got {:?}", embeddings.shape())));
    }
    embeddings.check_finite("embeddings")?;
    let n = embeddings.rows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| embeddings.row(i).iter().map(|v| v.as_f64()).collect()).collect();
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    if let Some(i) = norms.iter().position(|&x| x == 0.0) {
        return Err(Error::ZeroNorm(i));
    }
    let mut values = Tensor::eye(n);
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let c = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            values.set2(i, j, c);
            values.set2(j, i, c);
        }
    }
    Ok(SimilarityMatrix { kind: SimilarityKind::Cosine, values })
}

/// Pearson correlation between every pair of ROI signals.
pub fn pearson_fcn(ts: &RoiTimeSeries) -> Result<SimilarityMatrix> {
    let n = ts.roi_count();
    let t = ts.timepoints() as f64;
    let mut centered = Vec::with_capacity(n);
    for r in 0..n {
        let col = ts.column(r);
        let mean = col.iter().sum::<f64>() / t;
        let c: Vec<f64> = col.iter().map(|v| v - mean).collect();
        let ss: f64 = c.iter().map(|v| v * v).sum();
        let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if ss <= (1e-12 * scale).powi(2) * t {
            return Err(Error::ConstantSignal { roi: r });
        }
        let norm = ss.sqrt();
        centered.push(c.into_iter().map(|v| v / norm).collect::<Vec<f64>>());
    }
    let mut values = Tensor::eye(n);
    for i in 0..n {
        for j in 0..i {
            let r = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0);
            values.set2(i, j, r);
            values.set2(j, i, r);
        }
    }
    Ok(SimilarityMatrix { kind: SimilarityKind::Correlation, values })
}

/// Elementwise Fisher transform of a correlation matrix; diagonal set to 0.
pub fn fisher_z(m: &SimilarityMatrix) -> Result<SimilarityMatrix> {
    if m.kind != SimilarityKind::Correlation {
        return Err(Error::InvalidArgument(format!("fisher_z needs a correlation matrix, got {:?}", m.kind)));
    }
    let n = m.n();
    let bound = 1.0 - FISHER_CLAMP;
    let mut values = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                values.set2(i, j, m.get(i, j).clamp(-bound, bound).atanh());
            }
        }
    }
    Ok(SimilarityMatrix { kind: SimilarityKind::FisherZ, values })
}
