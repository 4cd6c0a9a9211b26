use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{CombatModel, CovariateModel, FeatureMatrix};
use crate::dataio::{AtlasSpec, RoiTimeSeries, SubjectRecord, Volume};
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Covariate residualization followed by ComBat, fitted on one subject set
/// and applicable to any other. With a single site both steps are skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonizer {
    pub covariates: Option<CovariateModel>,
    pub combat: Option<CombatModel>,
    /// Whether ComBat modelled the class label as a protected covariate.
    pub class_covariate: bool,
}

fn class_column(records: &[SubjectRecord]) -> Tensor<f64> {
    Tensor::from_parts(
        vec![records.len(), 1],
        records.iter().map(|r| r.label as f64).collect(),
    )
}

impl Harmonizer {
    pub fn identity() -> Self {
        Harmonizer { covariates: None, combat: None, class_covariate: false }
    }

    pub fn fit(m: &FeatureMatrix) -> Result<Self> {
        Self::fit_with(m, false)
    }

    /// `class_covariate` protects the label effect inside ComBat. Applying
    /// such a model needs labels, so it is meant for labelled analyses only.
    pub fn fit_with(m: &FeatureMatrix, class_covariate: bool) -> Result<Self> {
        let sites: BTreeSet<&str> = m.records.iter().map(|r| r.site.as_str()).collect();
        if sites.len() < 2 {
            warn!("single site in harmonization input; leaving features unchanged");
            return Ok(Self::identity());
        }
        let covariates = CovariateModel::fit(m)?;
        let resid = covariates.apply(m)?;
        let class = class_covariate.then(|| class_column(&m.records));
        let combat = CombatModel::fit(&resid, class.as_ref())?;
        Ok(Harmonizer { covariates: Some(covariates), combat: Some(combat), class_covariate })
    }

    pub fn is_identity(&self) -> bool {
        self.covariates.is_none() && self.combat.is_none()
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        let mut out = match &self.covariates {
            Some(c) => c.apply(m)?,
            None => m.clone(),
        };
        if let Some(combat) = &self.combat {
            let class = self.class_covariate.then(|| class_column(&m.records));
            out = combat.apply(&out, class.as_ref())?;
        }
        Ok(out)
    }
}

fn volume_features(atlas: &AtlasSpec, records: &[SubjectRecord], volumes: &[Volume]) -> Result<FeatureMatrix> {
    let n = atlas.roi_count();
    let data = volumes.iter().flat_map(|v| v.roi_means(atlas)).collect();
    FeatureMatrix::new(Tensor::from_parts(vec![volumes.len(), n], data), records.to_vec())
}

/// Per-(subject, ROI) mean and log standard deviation over time.
fn timeseries_features(records: &[SubjectRecord], ts: &[RoiTimeSeries]) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let n = ts.first().map_or(0, RoiTimeSeries::roi_count);
    if ts.iter().any(|t| t.roi_count() != n) {
        return Err(Error::Shape("time series disagree on ROI count".into()));
    }
    let mut means = Vec::with_capacity(ts.len() * n);
    let mut log_sds = Vec::with_capacity(ts.len() * n);
    for t in ts {
        for r in 0..n {
            let col = t.column(r);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            if var <= 0.0 {
                return Err(Error::ConstantSignal { roi: r });
            }
            means.push(mean);
            log_sds.push(0.5 * var.ln());
        }
    }
    Ok((
        FeatureMatrix::new(Tensor::from_parts(vec![ts.len(), n], means), records.to_vec())?,
        FeatureMatrix::new(Tensor::from_parts(vec![ts.len(), n], log_sds), records.to_vec())?,
    ))
}

fn check_aligned(records: &[SubjectRecord], len: usize, what: &str) -> Result<()> {
    if records.len() != len {
        return Err(Error::Shape(format!("{} records for {len} {what}", records.len())));
    }
    Ok(())
}

/// Harmonizers for both modalities. Volumes are corrected through their
/// ROI box means with an additive per-ROI shift; time series through their
/// per-ROI mean and log standard deviation with a per-ROI affine map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortHarmonizer {
    pub structural: Harmonizer,
    pub timeseries_mean: Harmonizer,
    pub timeseries_scale: Harmonizer,
}

impl CohortHarmonizer {
    pub fn fit(
        atlas: &AtlasSpec,
        records: &[SubjectRecord],
        volumes: &[Volume],
        timeseries: &[RoiTimeSeries],
    ) -> Result<Self> {
        check_aligned(records, volumes.len(), "volumes")?;
        check_aligned(records, timeseries.len(), "time series")?;
        let structural = Harmonizer::fit(&volume_features(atlas, records, volumes)?)?;
        let (mean, scale) = timeseries_features(records, timeseries)?;
        Ok(CohortHarmonizer {
            structural,
            timeseries_mean: Harmonizer::fit(&mean)?,
            timeseries_scale: Harmonizer::fit(&scale)?,
        })
    }

    pub fn apply_volumes(&self, atlas: &AtlasSpec, records: &[SubjectRecord], volumes: &[Volume]) -> Result<Vec<Volume>> {
        check_aligned(records, volumes.len(), "volumes")?;
        if self.structural.is_identity() {
            return Ok(volumes.to_vec());
        }
        let before = volume_features(atlas, records, volumes)?;
        let after = self.structural.apply(&before)?;
        Ok(volumes
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let shift: Vec<f64> =
                    after.values.row(j).iter().zip(before.values.row(j)).map(|(a, b)| a - b).collect();
                let mut v = v.clone();
                v.shift_rois(atlas, &shift);
                v
            })
            .collect())
    }

    pub fn apply_timeseries(&self, records: &[SubjectRecord], timeseries: &[RoiTimeSeries]) -> Result<Vec<RoiTimeSeries>> {
        check_aligned(records, timeseries.len(), "time series")?;
        if self.timeseries_mean.is_identity() && self.timeseries_scale.is_identity() {
            return Ok(timeseries.to_vec());
        }
        let (mean, scale) = timeseries_features(records, timeseries)?;
        let mean_h = self.timeseries_mean.apply(&mean)?;
        let scale_h = self.timeseries_scale.apply(&scale)?;
        Ok(timeseries
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let k: Vec<f64> = scale_h
                    .values
                    .row(j)
                    .iter()
                    .zip(scale.values.row(j))
                    .map(|(a, b)| (a - b).exp())
                    .collect();
                let offset: Vec<f64> = (0..k.len())
                    .map(|r| mean_h.values.get2(j, r) - mean.values.get2(j, r) * k[r])
                    .collect();
                let mut t = t.clone();
                t.affine_columns(&offset, &k);
                t
            })
            .collect())
    }
}

/// Fits on and harmonizes one set of time series.
pub fn harmonize_timeseries(records: &[SubjectRecord], timeseries: &[RoiTimeSeries]) -> Result<Vec<RoiTimeSeries>> {
    check_aligned(records, timeseries.len(), "time series")?;
    let (mean, scale) = timeseries_features(records, timeseries)?;
    let h = CohortHarmonizer {
        structural: Harmonizer::identity(),
        timeseries_mean: Harmonizer::fit(&mean)?,
        timeseries_scale: Harmonizer::fit(&scale)?,
    };
    h.apply_timeseries(records, timeseries)
}
