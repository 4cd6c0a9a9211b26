//! Cohort data model, on-disk formats and the synthetic cohort generator.

mod atlas;
mod cohort;
mod generator;
mod manifest;
mod volume;

pub use atlas::{AtlasSpec, RoiBox};
pub use cohort::Cohort;
pub use generator::{
    generate_cohort, synthesize_cohort, synthesize_site_features, GeneratorConfig,
    PlantedEffects, SiteFeatureConfig, SiteFeatures,
};
pub use manifest::{CohortManifest, SubjectEntry, SubjectRecord, MANIFEST_SCHEMA_VERSION};
pub use volume::{extract_roi_patches, RoiPatchSet, RoiTimeSeries, Volume};
