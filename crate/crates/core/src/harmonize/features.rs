use crate::dataio::SubjectRecord;
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Subjects × features matrix with aligned subject records.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Tensor<f64>,
    pub records: Vec<SubjectRecord>,
}

impl FeatureMatrix {
    pub fn new(values: Tensor<f64>, records: Vec<SubjectRecord>) -> Result<Self> {
        if values.rank() != 2 || values.rows() != records.len() {
            return Err(Error::Shape(format!(
                "feature matrix {:?} for {} subjects",
                values.shape(),
                records.len()
            )));
        }
        values.check_finite("feature matrix")?;
        Ok(FeatureMatrix { values, records })
    }

    pub fn subjects(&self) -> usize {
        self.values.rows()
    }

    pub fn features(&self) -> usize {
        self.values.cols()
    }

    pub fn column(&self, g: usize) -> Vec<f64> {
        (0..self.subjects()).map(|j| self.values.get2(j, g)).collect()
    }

    /// Rows selected by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> FeatureMatrix {
        let g = self.features();
        let mut data = Vec::with_capacity(idx.len() * g);
        for &i in idx {
            data.extend_from_slice(self.values.row(i));
        }
        FeatureMatrix {
            values: Tensor::from_parts(vec![idx.len(), g], data),
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}
