use std::path::Path;

use rayon::prelude::*;

use super::{
    AtlasSpec, CohortManifest, PlantedEffects, RoiTimeSeries, SubjectEntry, SubjectRecord, Volume,
    MANIFEST_SCHEMA_VERSION,
};
use crate::{Error, Result};

/// A fully loaded cohort: records plus per-subject volume and time series.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub atlas: AtlasSpec,
    pub records: Vec<SubjectRecord>,
    pub volumes: Vec<Volume>,
    pub timeseries: Vec<RoiTimeSeries>,
    pub seed: Option<u64>,
    pub effects: Option<PlantedEffects>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label as usize).collect()
    }

    /// Writes `manifest.json`, `volumes/<id>.ngt` and `timeseries/<id>.ngt`
    /// under `dir` and returns the manifest.
    pub fn save(&self, dir: &Path) -> Result<CohortManifest> {
        let subjects: Vec<SubjectEntry> = self
            .records
            .iter()
            .map(|r| SubjectEntry {
                record: r.clone(),
                volume_path: format!("volumes/{}.ngt", r.id),
                timeseries_path: format!("timeseries/{}.ngt", r.id),
            })
            .collect();
        subjects
            .par_iter()
            .zip(self.volumes.par_iter().zip(self.timeseries.par_iter()))
            .try_for_each(|(s, (v, ts))| -> Result<()> {
                v.save(&dir.join(&s.volume_path))?;
                ts.save(&dir.join(&s.timeseries_path))
            })?;
        let manifest = CohortManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            atlas: self.atlas.clone(),
            seed: self.seed,
            effects: self.effects.clone(),
            subjects,
            base_dir: dir.to_path_buf(),
        };
        manifest.save(&dir.join("manifest.json"))?;
        Ok(manifest)
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        Self::from_manifest(&CohortManifest::load(manifest_path)?)
    }

    pub fn from_manifest(m: &CohortManifest) -> Result<Self> {
        let loaded: Vec<(Volume, RoiTimeSeries)> = m
            .subjects
            .par_iter()
            .map(|s| -> Result<_> {
                let v = Volume::load(&m.resolve(&s.volume_path))?;
                let ts = RoiTimeSeries::load(&m.resolve(&s.timeseries_path))?;
                if v.extents() != m.atlas.volume_extents {
                    return Err(Error::Shape(format!(
                        "subject '{}' volume {:?} vs atlas {:?}",
                        s.record.id,
                        v.extents(),
                        m.atlas.volume_extents
                    )));
                }
                if ts.roi_count() != m.atlas.roi_count() {
                    return Err(Error::Shape(format!(
                        "subject '{}' time series has {} ROIs, atlas has {}",
                        s.record.id,
                        ts.roi_count(),
                        m.atlas.roi_count()
                    )));
                }
                Ok((v, ts))
            })
            .collect::<Result<_>>()?;
        let (volumes, timeseries) = loaded.into_iter().unzip();
        Ok(Cohort {
            atlas: m.atlas.clone(),
            records: m.records(),
            volumes,
            timeseries,
            seed: m.seed,
            effects: m.effects.clone(),
        })
    }
}
