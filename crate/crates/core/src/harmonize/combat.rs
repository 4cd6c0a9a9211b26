use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, LeastSquares};
use crate::numerics::Tensor;
use crate::{Error, Result};

pub const COMBAT_TOLERANCE: f64 = 1e-6;
pub const COMBAT_MAX_ITERATIONS: usize = 500;
const MIN_SITE_SUBJECTS: usize = 3;
const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Empirical-Bayes site effects for one site, in standardized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteEffects {
    pub id: String,
    /// Additive shift per feature.
    pub gamma: Vec<f64>,
    /// Multiplicative scale per feature (standard-deviation ratio, > 0).
    pub delta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombatModel {
    /// Overall mean per feature.
    pub alpha: Vec<f64>,
    /// Covariate coefficients, `[covariate][feature]`; empty without covariates.
    pub beta: Vec<Vec<f64>>,
    pub sites: Vec<SiteEffects>,
    pub pooled_var: Vec<f64>,
}

fn site_groups(m: &FeatureMatrix) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (j, r) in m.records.iter().enumerate() {
        groups.entry(r.site.as_str()).or_default().push(j);
    }
    groups
}

fn check_covariates(m: &FeatureMatrix, cov: Option<&Tensor<f64>>) -> Result<usize> {
    match cov {
        None => Ok(0),
        Some(c) if c.rank() == 2 && c.rows() == m.subjects() => {
            c.check_finite("covariates")?;
            Ok(c.cols())
        }
        Some(c) => Err(Error::Shape(format!(
            "covariates {:?} for {} subjects",
            c.shape(),
            m.subjects()
        ))),
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Fits a ComBat model without biological covariates.
pub fn combat_fit(m: &FeatureMatrix) -> Result<CombatModel> {
    CombatModel::fit(m, None)
}

/// Removes the site effects of `model` from `m`.
pub fn combat_apply(m: &FeatureMatrix, model: &CombatModel) -> Result<FeatureMatrix> {
    model.apply(m, None)
}

impl CombatModel {
    /// Fits site effects. `covariates` (subjects × q) are modelled jointly
    /// with the site indicators and their signal is retained on apply.
    pub fn fit(m: &FeatureMatrix, covariates: Option<&Tensor<f64>>) -> Result<Self> {
        let q = check_covariates(m, covariates)?;
        let (n, g) = (m.subjects(), m.features());
        if g < 2 {
            return Err(Error::Insufficient(format!("{g} features; ComBat needs 2")));
        }
        let groups = site_groups(m);
        if groups.len() < 2 {
            return Err(Error::Insufficient(format!("{} site; ComBat needs 2", groups.len())));
        }
        if let Some((site, idx)) = groups.iter().find(|(_, idx)| idx.len() < MIN_SITE_SUBJECTS) {
            return Err(Error::Insufficient(format!(
                "site {site} has {} subjects; ComBat needs {MIN_SITE_SUBJECTS}",
                idx.len()
            )));
        }
        let s = groups.len();
        let site_of: Vec<usize> = {
            let mut v = vec![0; n];
            for (k, idx) in groups.values().enumerate() {
                idx.iter().for_each(|&j| v[j] = k);
            }
            v
        };

        let mut design = Tensor::zeros(&[n, s + q]);
        for j in 0..n {
            design.set2(j, site_of[j], 1.0);
            for c in 0..q {
                design.set2(j, s + c, covariates.unwrap().get2(j, c));
            }
        }
        let ls = LeastSquares::new(&design)?;

        let mut alpha = vec![0.0; g];
        let mut beta = vec![vec![0.0; g]; q];
        let mut pooled_var = vec![0.0; g];
        let mut standardized = Tensor::zeros(&[n, g]);
        for f in 0..g {
            let y = m.column(f);
            let b = ls.solve(&y);
            alpha[f] = groups.values().zip(&b).map(|(idx, bk)| idx.len() as f64 * bk).sum::<f64>() / n as f64;
            for c in 0..q {
                beta[c][f] = b[s + c];
            }
            let mut ss = 0.0;
            for j in 0..n {
                let cov_part: f64 = (0..q).map(|c| design.get2(j, s + c) * b[s + c]).sum();
                ss += (y[j] - b[site_of[j]] - cov_part).powi(2);
            }
            pooled_var[f] = ss / n as f64;
            if pooled_var[f] <= DEGENERATE_VARIANCE {
                return Err(Error::InvalidArgument(format!("feature {f} has zero pooled variance")));
            }
            let sd = pooled_var[f].sqrt();
            for j in 0..n {
                let cov_part: f64 = (0..q).map(|c| design.get2(j, s + c) * b[s + c]).sum();
                standardized.set2(j, f, (y[j] - alpha[f] - cov_part) / sd);
            }
        }

        let sites = groups
            .iter()
            .map(|(id, idx)| {
                let (gamma, delta_sq) = shrink_site(&standardized, idx);
                SiteEffects {
                    id: id.to_string(),
                    gamma,
                    delta: delta_sq.into_iter().map(f64::sqrt).collect(),
                }
            })
            .collect();
        Ok(CombatModel { alpha, beta, sites, pooled_var })
    }

    pub fn features(&self) -> usize {
        self.alpha.len()
    }

    pub fn site(&self, id: &str) -> Option<&SiteEffects> {
        self.sites.iter().find(|s| s.id == id)
    }

    pub fn apply(&self, m: &FeatureMatrix, covariates: Option<&Tensor<f64>>) -> Result<FeatureMatrix> {
        let q = check_covariates(m, covariates)?;
        if q != self.beta.len() {
            return Err(Error::Shape(format!("model has {} covariates, got {q}", self.beta.len())));
        }
        if m.features() != self.features() {
            return Err(Error::Shape(format!(
                "model fitted on {} features, got {}",
                self.features(),
                m.features()
            )));
        }
        let effects = m
            .records
            .iter()
            .map(|r| self.site(&r.site).ok_or_else(|| Error::UnknownSite(r.site.clone())))
            .collect::<Result<Vec<_>>>()?;
        let mut out = m.clone();
        out.values
            .data_mut()
            .par_chunks_mut(self.features())
            .zip(effects.par_iter())
            .enumerate()
            .for_each(|(j, (row, site))| {
                for (f, v) in row.iter_mut().enumerate() {
                    let cov_part: f64 = (0..q).map(|c| covariates.unwrap().get2(j, c) * self.beta[c][f]).sum();
                    let stand_mean = self.alpha[f] + cov_part;
                    let sd = self.pooled_var[f].sqrt();
                    let z = (*v - stand_mean) / sd;
                    *v = (z - site.gamma[f]) / site.delta[f] * sd + stand_mean;
                }
            });
        Ok(out)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        crate::numerics::ngt::write_atomic(path, &json)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let model: CombatModel = serde_json::from_slice(&bytes)?;
        if model.sites.iter().any(|s| {
            s.gamma.len() != model.alpha.len()
                || s.delta.len() != model.alpha.len()
                || s.delta.iter().any(|d| !(*d > 0.0))
        }) || model.pooled_var.len() != model.alpha.len()
        {
            return Err(Error::parse("combat model", "inconsistent site effects"));
        }
        Ok(model)
    }
}

/// Parametric empirical-Bayes estimates for one site: normal prior on the
/// additive effects and inverse-gamma prior on the variance ratios, both
/// pooled across features. Returns `(gamma*, delta*²)`.
fn shrink_site(z: &Tensor<f64>, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let g = z.cols();
    let n = idx.len() as f64;
    let cols: Vec<Vec<f64>> = (0..g).map(|f| idx.iter().map(|&j| z.get2(j, f)).collect()).collect();
    let (gamma_hat, delta_hat): (Vec<f64>, Vec<f64>) = cols.iter().map(|c| mean_var(c)).unzip();

    let (gamma_bar, tau2) = mean_var(&gamma_hat);
    let (d_mean, d_var) = mean_var(&delta_hat);
    let inv_gamma_prior = (d_var > DEGENERATE_VARIANCE).then(|| {
        let a = (2.0 * d_var + d_mean * d_mean) / d_var;
        let b = (d_mean * d_var + d_mean.powi(3)) / d_var;
        (a, b)
    });

    let mut gamma = gamma_hat.clone();
    let mut delta = delta_hat.clone();
    for _ in 0..COMBAT_MAX_ITERATIONS {
        let gamma_new: Vec<f64> = gamma_hat
            .iter()
            .zip(&delta)
            .map(|(&gh, &d)| {
                if tau2 <= DEGENERATE_VARIANCE {
                    gamma_bar
                } else {
                    (n * tau2 * gh + d * gamma_bar) / (n * tau2 + d)
                }
            })
            .collect();
        let delta_new: Vec<f64> = cols
            .iter()
            .zip(&gamma_new)
            .map(|(c, &gm)| {
                let ss: f64 = c.iter().map(|x| (x - gm).powi(2)).sum();
                match inv_gamma_prior {
                    Some((a, b)) => (0.5 * ss + b) / (n / 2.0 + a - 1.0),
                    None => ss / (n - 1.0),
                }
            })
            .collect();
        let change = |new: &[f64], old: &[f64]| {
            new.iter()
                .zip(old)
                .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
                .fold(0.0, f64::max)
        };
        let done = change(&gamma_new, &gamma).max(change(&delta_new, &delta)) < COMBAT_TOLERANCE;
        gamma = gamma_new;
        delta = delta_new;
        if done {
            break;
        }
    }
    (gamma, delta)
}
