//! Synthetic multi-site cohorts with planted class, site and covariate
//! effects.
//!
//! Every ROI `r` of subject `j` at site `s` follows a location/scale model
//!
//! ```text
//! y = alpha_r + beta_age_r * age + beta_sex_r * sex + class_r * label
//!     + gamma_{s,r} + delta_{s,r} * eps
//! ```
//!
//! applied separately to volume intensities (eps = subject-level ROI offset,
//! plus independent voxel noise) and to time series (eps = a latent-factor
//! Gaussian process whose within-module correlation is controlled exactly).

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AtlasSpec, Cohort, CohortManifest, RoiTimeSeries, SubjectRecord, Volume};
use crate::numerics::{seeded_rng, Tensor};
use crate::{Error, Result};

/// Magnitudes of every planted effect. Structural and site-location effects
/// are in units of the subject-level ROI standard deviation; the functional
/// effect is an increment in Pearson correlation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedEffects {
    /// Class-1 mean intensity shift in `structural_rois`.
    pub structural: f64,
    /// Class-1 increase of the pairwise correlation inside `functional_rois`.
    pub functional: f64,
    /// Designated ROIs; empty selects the first `module_size` ROIs.
    pub structural_rois: Vec<usize>,
    /// Designated module; empty selects ROIs `module_size..2*module_size`.
    pub functional_rois: Vec<usize>,
    pub module_size: usize,
    /// Within-module correlation of class-0 subjects.
    pub base_correlation: f64,
    /// Standard deviation of per-(site, ROI) additive offsets.
    pub site_gamma_sd: f64,
    /// Standard deviation of per-(site, ROI) log scale factors.
    pub site_delta_sd: f64,
    /// Per-decade age slope scale.
    pub age_effect: f64,
    pub sex_effect: f64,
    pub voxel_noise: f64,
    /// When set, each positive subject expresses exactly one modality's
    /// class effect (alternating), so neither modality alone separates the
    /// classes.
    pub split_modalities: bool,
}

impl Default for PlantedEffects {
    fn default() -> Self {
        PlantedEffects {
            structural: 0.5,
            functional: 0.4,
            structural_rois: Vec::new(),
            functional_rois: Vec::new(),
            module_size: 4,
            base_correlation: 0.45,
            site_gamma_sd: 0.5,
            site_delta_sd: 0.2,
            age_effect: 0.3,
            sex_effect: 0.3,
            voxel_noise: 0.3,
            split_modalities: false,
        }
    }
}

impl PlantedEffects {
    /// All class effects zero, nuisance effects unchanged.
    pub fn null() -> Self {
        PlantedEffects {
            structural: 0.0,
            functional: 0.0,
            ..Default::default()
        }
    }

    fn resolved(&self, n_rois: usize) -> Result<Self> {
        let mut e = self.clone();
        let m = e.module_size.max(1);
        if e.structural_rois.is_empty() {
            e.structural_rois = (0..m.min(n_rois)).collect();
        }
        if e.functional_rois.is_empty() {
            e.functional_rois = (m..(2 * m).min(n_rois)).collect();
        }
        for &r in e.structural_rois.iter().chain(&e.functional_rois) {
            if r >= n_rois {
                return Err(Error::InvalidArgument(format!("designated ROI {r} >= {n_rois}")));
            }
        }
        let effects = [e.structural, e.functional, e.site_gamma_sd, e.site_delta_sd, e.voxel_noise];
        if effects.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("effect sizes must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&e.base_correlation) || e.base_correlation + e.functional >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "base correlation {} plus functional effect {} must stay below 1",
                e.base_correlation, e.functional
            )));
        }
        Ok(e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_subjects: usize,
    pub n_sites: usize,
    pub n_rois: usize,
    pub volume_side: usize,
    pub timepoints: usize,
    pub patch_side: usize,
    pub effects: PlantedEffects,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_subjects: 200,
            n_sites: 4,
            n_rois: 16,
            volume_side: 48,
            timepoints: 64,
            patch_side: 8,
            effects: PlantedEffects::default(),
            seed: 0,
        }
    }
}

/// Per-ROI coefficients shared by all subjects of one modality.
struct ModalityModel {
    alpha: Vec<f64>,
    beta_age: Vec<f64>,
    beta_sex: Vec<f64>,
    /// `[site][roi]`
    gamma: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl ModalityModel {
    fn draw<R: Rng>(rng: &mut R, n_rois: usize, n_sites: usize, e: &PlantedEffects, alpha: (f64, f64)) -> Self {
        let std = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
        let alpha = (0..n_rois).map(|_| rng.random_range(alpha.0..alpha.1)).collect();
        let beta_age = (0..n_rois).map(|_| e.age_effect * std(rng)).collect();
        let beta_sex = (0..n_rois).map(|_| e.sex_effect * std(rng)).collect();
        let gamma = (0..n_sites)
            .map(|_| (0..n_rois).map(|_| e.site_gamma_sd * std(rng)).collect())
            .collect();
        let delta = (0..n_sites)
            .map(|_| (0..n_rois).map(|_| (e.site_delta_sd * std(rng)).exp()).collect())
            .collect();
        ModalityModel { alpha, beta_age, beta_sex, gamma, delta }
    }

    fn location(&self, roi: usize, site: usize, rec: &SubjectRecord) -> f64 {
        self.alpha[roi]
            + self.beta_age[roi] * (rec.age - 40.0) / 10.0
            + self.beta_sex[roi] * rec.sex as f64
            + self.gamma[site][roi]
    }
}

fn assign_records<R: Rng>(rng: &mut R, cfg: &GeneratorConfig) -> Vec<SubjectRecord> {
    let age = Normal::new(40.0, 12.0).expect("valid normal");
    (0..cfg.n_subjects)
        .map(|i| {
            let a: f64 = age.sample(rng);
            SubjectRecord {
                id: format!("sub-{i:04}"),
                site: format!("site-{}", i % cfg.n_sites),
                age: (a.clamp(18.0, 80.0) * 10.0).round() / 10.0,
                sex: rng.random_range(0..2u8),
                label: ((i / cfg.n_sites) % 2) as u8,
            }
        })
        .collect()
}

/// Builds a cohort in memory. Identical configurations give identical data.
pub fn synthesize_cohort(cfg: &GeneratorConfig) -> Result<Cohort> {
    if cfg.n_sites == 0 || cfg.n_subjects < 4 * cfg.n_sites {
        return Err(Error::Stratification(format!(
            "{} subjects cannot give each of {} sites two subjects per class",
            cfg.n_subjects, cfg.n_sites
        )));
    }
    if cfg.timepoints < RoiTimeSeries::MIN_TIMEPOINTS {
        return Err(Error::InvalidArgument(format!("{} time points is too few", cfg.timepoints)));
    }
    let atlas = AtlasSpec::synthetic(cfg.n_rois, cfg.volume_side)?;
    let effects = cfg.effects.resolved(cfg.n_rois)?;

    let mut global = seeded_rng(cfg.seed, "cohort", 0);
    let structural = ModalityModel::draw(&mut global, cfg.n_rois, cfg.n_sites, &effects, (0.5, 1.5));
    let functional = ModalityModel::draw(&mut global, cfg.n_rois, cfg.n_sites, &effects, (-1.0, 1.0));
    let records = assign_records(&mut global, cfg);
    let modules = latent_modules(cfg.n_rois, &effects);

    let subjects: Vec<(Volume, RoiTimeSeries)> = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut rng = seeded_rng(cfg.seed, "subject", i as u64);
            let site = i % cfg.n_sites;
            let positive = rec.label == 1;
            let (expr_s, expr_f) = match (positive, effects.split_modalities) {
                (false, _) => (false, false),
                (true, false) => (true, true),
                (true, true) => {
                    let structural_first = (i / (2 * cfg.n_sites)).is_multiple_of(2);
                    (structural_first, !structural_first)
                }
            };
            let volume = subject_volume(&mut rng, &atlas, &structural, &effects, rec, site, expr_s);
            let ts = subject_timeseries(&mut rng, cfg, &functional, &effects, &modules, rec, site, expr_f)?;
            Ok((volume, ts))
        })
        .collect::<Result<_>>()?;
    let (volumes, timeseries) = subjects.into_iter().unzip();
    Ok(Cohort {
        atlas,
        records,
        volumes,
        timeseries,
        seed: Some(cfg.seed),
        effects: Some(effects),
    })
}

/// Synthesizes the cohort and writes it under `out_dir`.
pub fn generate_cohort(cfg: &GeneratorConfig, out_dir: &Path) -> Result<CohortManifest> {
    synthesize_cohort(cfg)?.save(out_dir)
}

fn subject_volume<R: Rng>(
    rng: &mut R,
    atlas: &AtlasSpec,
    model: &ModalityModel,
    e: &PlantedEffects,
    rec: &SubjectRecord,
    site: usize,
    express: bool,
) -> Volume {
    let mut v = Volume::zeros(atlas.volume_extents);
    for (r, b) in atlas.rois.iter().enumerate() {
        let u: f64 = StandardNormal.sample(rng);
        let class = if express && e.structural_rois.contains(&r) { e.structural } else { 0.0 };
        let level = model.location(r, site, rec) + class + model.delta[site][r] * u;
        for x in b.lo[0]..b.hi[0] {
            for y in b.lo[1]..b.hi[1] {
                for z in b.lo[2]..b.hi[2] {
                    let n: f64 = StandardNormal.sample(rng);
                    v.set([x, y, z], (level + e.voxel_noise * n) as f32);
                }
            }
        }
    }
    v
}

/// ROI groups sharing one latent factor: the designated functional module
/// first, then consecutive chunks of the remaining ROIs.
fn latent_modules(n_rois: usize, e: &PlantedEffects) -> Vec<Vec<usize>> {
    let mut modules = vec![e.functional_rois.clone()];
    let rest: Vec<usize> = (0..n_rois).filter(|r| !e.functional_rois.contains(r)).collect();
    for chunk in rest.chunks(e.module_size.max(1)) {
        if chunk.len() > 1 {
            modules.push(chunk.to_vec());
        }
    }
    modules
}

#[allow(clippy::too_many_arguments)]
fn subject_timeseries<R: Rng>(
    rng: &mut R,
    cfg: &GeneratorConfig,
    model: &ModalityModel,
    e: &PlantedEffects,
    modules: &[Vec<usize>],
    rec: &SubjectRecord,
    site: usize,
    express: bool,
) -> Result<RoiTimeSeries> {
    let (t_len, n) = (cfg.timepoints, cfg.n_rois);
    // loading[r] = sqrt(rho) for module members, 0 for independent ROIs
    let mut module_of = vec![None; n];
    let mut rho = vec![0.0; modules.len()];
    for (m, members) in modules.iter().enumerate() {
        rho[m] = e.base_correlation + if m == 0 && express { e.functional } else { 0.0 };
        for &r in members {
            module_of[r] = Some(m);
        }
    }
    for _attempt in 0..16 {
        let latent: Vec<Vec<f64>> = (0..modules.len())
            .map(|_| (0..t_len).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        let mut data = vec![0.0f32; t_len * n];
        for r in 0..n {
            let loc = model.location(r, site, rec);
            let scale = model.delta[site][r];
            for t in 0..t_len {
                let own: f64 = StandardNormal.sample(rng);
                let eps = match module_of[r] {
                    Some(m) => rho[m].sqrt() * latent[m][t] + (1.0 - rho[m]).sqrt() * own,
                    None => own,
                };
                data[t * n + r] = (loc + scale * eps) as f32;
            }
        }
        let constant = (0..n).any(|r| (1..t_len).all(|t| data[t * n + r] == data[r]));
        if !constant {
            return RoiTimeSeries::new(Tensor::new(vec![t_len, n], data)?);
        }
    }
    Err(Error::InvalidArgument("could not draw a non-constant time series".into()))
}

/// Settings for a plain subjects × features matrix drawn from the same
/// location/scale model, with one `(gamma, delta)` pair per site applied to
/// every feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteFeatureConfig {
    pub n_subjects: usize,
    pub n_features: usize,
    pub sites: Vec<(f64, f64)>,
    /// Class-1 shift applied to the first `class_features` features.
    pub class_effect: f64,
    pub class_features: usize,
    pub covariate_effect: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SiteFeatures {
    pub records: Vec<SubjectRecord>,
    pub values: Tensor<f64>,
}

pub fn synthesize_site_features(cfg: &SiteFeatureConfig) -> Result<SiteFeatures> {
    let n_sites = cfg.sites.len();
    if n_sites == 0 || cfg.n_subjects < 4 * n_sites {
        return Err(Error::Stratification("too few subjects per site".into()));
    }
    let gen_cfg = GeneratorConfig {
        n_subjects: cfg.n_subjects,
        n_sites,
        seed: cfg.seed,
        ..Default::default()
    };
    let mut rng = seeded_rng(cfg.seed, "site-features", 0);
    let records = assign_records(&mut rng, &gen_cfg);
    let std = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let alpha: Vec<f64> = (0..cfg.n_features).map(|_| 3.0 * std(&mut rng)).collect();
    let b_age: Vec<f64> = (0..cfg.n_features).map(|_| cfg.covariate_effect * std(&mut rng)).collect();
    let b_sex: Vec<f64> = (0..cfg.n_features).map(|_| cfg.covariate_effect * std(&mut rng)).collect();
    let mut values = Tensor::zeros(&[cfg.n_subjects, cfg.n_features]);
    for (i, rec) in records.iter().enumerate() {
        let (gamma, delta) = cfg.sites[i % n_sites];
        for g in 0..cfg.n_features {
            let class = if g < cfg.class_features { cfg.class_effect * rec.label as f64 } else { 0.0 };
            let y = alpha[g]
                + b_age[g] * (rec.age - 40.0) / 10.0
                + b_sex[g] * rec.sex as f64
                + class
                + gamma
                + delta * std(&mut rng);
            values.set2(i, g, y);
        }
    }
    Ok(SiteFeatures { records, values })
}
