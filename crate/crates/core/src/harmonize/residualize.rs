use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, LeastSquares};
use crate::dataio::SubjectRecord;
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Per-feature OLS fit on `[1, age, sex]` with covariates centred on the
/// fitting sample, so the intercept equals the feature's sample mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateModel {
    pub age_mean: f64,
    pub sex_mean: f64,
    /// `[intercept, age, sex]` coefficient rows, one column per feature.
    pub coefficients: Vec<Vec<f64>>,
}

fn design(records: &[SubjectRecord], age_mean: f64, sex_mean: f64) -> Tensor<f64> {
    let mut d = Tensor::zeros(&[records.len(), 3]);
    for (i, r) in records.iter().enumerate() {
        d.set2(i, 0, 1.0);
        d.set2(i, 1, r.age - age_mean);
        d.set2(i, 2, r.sex as f64 - sex_mean);
    }
    d
}

impl CovariateModel {
    pub fn fit(m: &FeatureMatrix) -> Result<Self> {
        let n = m.subjects();
        if n < 3 {
            return Err(Error::Insufficient(format!("{n} subjects; residualization needs 3")));
        }
        let age_mean = m.records.iter().map(|r| r.age).sum::<f64>() / n as f64;
        let sex_mean = m.records.iter().map(|r| r.sex as f64).sum::<f64>() / n as f64;
        let ls = LeastSquares::new(&design(&m.records, age_mean, sex_mean))?;
        let mut coefficients = vec![vec![0.0; m.features()]; 3];
        for g in 0..m.features() {
            for (k, b) in ls.solve(&m.column(g)).into_iter().enumerate() {
                coefficients[k][g] = b;
            }
        }
        Ok(CovariateModel { age_mean, sex_mean, coefficients })
    }

    /// Removes the fitted age and sex terms, keeping the intercept.
    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.features() != self.coefficients[0].len() {
            return Err(Error::Shape(format!(
                "model fitted on {} features, got {}",
                self.coefficients[0].len(),
                m.features()
            )));
        }
        let mut out = m.clone();
        for (j, r) in m.records.iter().enumerate() {
            let (a, s) = (r.age - self.age_mean, r.sex as f64 - self.sex_mean);
            for (g, v) in out.values.row_mut(j).iter_mut().enumerate() {
                *v -= self.coefficients[1][g] * a + self.coefficients[2][g] * s;
            }
        }
        Ok(out)
    }
}

/// Fits and applies [`CovariateModel`] on the same subjects.
pub fn residualize_covariates(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    CovariateModel::fit(m)?.apply(m)
}
