use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AtlasSpec, PlantedEffects};
use crate::numerics::ngt::write_atomic;
use crate::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Demographics and label of one subject. `label` 1 is the positive
/// (patient) class for every metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub site: String,
    pub age: f64,
    pub sex: u8,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    #[serde(flatten)]
    pub record: SubjectRecord,
    /// Relative to the manifest's directory unless absolute.
    pub volume_path: String,
    pub timeseries_path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub schema_version: u32,
    pub atlas: AtlasSpec,
    pub seed: Option<u64>,
    pub effects: Option<PlantedEffects>,
    pub subjects: Vec<SubjectEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl CohortManifest {
    pub fn records(&self) -> Vec<SubjectRecord> {
        self.subjects.iter().map(|s| s.record.clone()).collect()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        write_atomic(path, &json)
    }

    /// Parses the manifest and checks the schema version, id uniqueness,
    /// the atlas, and that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::parse(path.display().to_string(), "missing schema_version"))?;
        if found != MANIFEST_SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion {
                found: found as u32,
                expected: MANIFEST_SCHEMA_VERSION,
            });
        }
        let mut m: CohortManifest = serde_json::from_value(value)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.atlas.validate()?;
        let mut seen = HashSet::new();
        for s in &self.subjects {
            if !seen.insert(&s.record.id) {
                return Err(Error::InvalidArgument(format!("duplicate subject id '{}'", s.record.id)));
            }
            if s.record.label > 1 || s.record.sex > 1 {
                return Err(Error::InvalidArgument(format!(
                    "subject '{}' has non-binary label or sex",
                    s.record.id
                )));
            }
            for rel in [&s.volume_path, &s.timeseries_path] {
                let p = self.resolve(rel);
                if !p.is_file() {
                    return Err(Error::MissingFile(p));
                }
            }
        }
        Ok(())
    }
}
