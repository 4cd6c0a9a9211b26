//! Covariate residualization and ComBat site harmonization.
//!
//! Site effects follow a location/scale model per feature: an additive
//! offset `gamma` and a multiplicative scale `delta` per site, estimated
//! with parametric empirical Bayes shrinkage across features.

mod cohort;
mod combat;
mod features;
mod ols;
mod residualize;

pub use cohort::{harmonize_timeseries, CohortHarmonizer, Harmonizer};
pub use combat::{combat_apply, combat_fit, CombatModel, SiteEffects, COMBAT_MAX_ITERATIONS, COMBAT_TOLERANCE};
pub use features::FeatureMatrix;
pub use ols::LeastSquares;
pub use residualize::{residualize_covariates, CovariateModel};

#[cfg(test)]
mod tests;
