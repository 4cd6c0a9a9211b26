use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pool::{global_average_pool_backward, mean_rows};
use super::{CrossAttention, CrossAttentionCache, Mlp};
use crate::encoders::{GatCache, GatConfig, GatParams};
use crate::graphs::{BrainGraph, Modality};
use crate::numerics::{cross_entropy_with_softmax, param_set, softmax, ParamSet, Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    Concat,
    Dual,
    StructuralOnly,
    FunctionalOnly,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 4] =
        [FusionVariant::Concat, FusionVariant::Dual, FusionVariant::StructuralOnly, FusionVariant::FunctionalOnly];

    pub fn name(self) -> &'static str {
        match self {
            FusionVariant::Concat => "concat",
            FusionVariant::Dual => "dual",
            FusionVariant::StructuralOnly => "structural_only",
            FusionVariant::FunctionalOnly => "functional_only",
        }
    }

    pub fn uses(self, m: Modality) -> bool {
        match self {
            FusionVariant::Concat | FusionVariant::Dual => true,
            FusionVariant::StructuralOnly => m == Modality::Structural,
            FusionVariant::FunctionalOnly => m == Modality::Functional,
        }
    }

    pub fn is_multimodal(self) -> bool {
        matches!(self, FusionVariant::Concat | FusionVariant::Dual)
    }
}

impl std::str::FromStr for FusionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(FusionVariant::Concat),
            "dual" | "dual_cross_attention" => Ok(FusionVariant::Dual),
            "structural" | "structural_only" => Ok(FusionVariant::StructuralOnly),
            "functional" | "functional_only" => Ok(FusionVariant::FunctionalOnly),
            other => Err(Error::InvalidArgument(format!("unknown fusion variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture of the second training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub gat: GatConfig,
    /// Cross-attention heads.
    pub heads: usize,
    pub hidden_dim: usize,
    pub classes: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { gat: GatConfig::default(), heads: 8, hidden_dim: 64, classes: 2 }
    }
}

/// Both graphs of one subject; a unimodal variant needs only its own.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectGraphs {
    pub structural: Option<BrainGraph>,
    pub functional: Option<BrainGraph>,
}

/// GAT encoders, optional cross-attention and the MLP head.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<T> {
    pub variant: FusionVariant,
    pub heads: usize,
    pub gat_structural: Option<GatParams<T>>,
    pub gat_functional: Option<GatParams<T>>,
    pub s_to_f: Option<CrossAttention<T>>,
    pub f_to_s: Option<CrossAttention<T>>,
    pub mlp: Mlp<T>,
}

param_set!(FusionParams { gat_structural, gat_functional, s_to_f, f_to_s, mlp });

#[derive(Clone, Debug)]
pub struct SubjectCache<T> {
    n: usize,
    structural: Option<GatCache<T>>,
    functional: Option<GatCache<T>>,
    s_to_f: Option<CrossAttentionCache<T>>,
    f_to_s: Option<CrossAttentionCache<T>>,
}

impl<T> SubjectCache<T> {
    pub fn cross_attention(&self) -> impl Iterator<Item = &CrossAttentionCache<T>> {
        self.s_to_f.iter().chain(self.f_to_s.iter())
    }

    pub fn gat(&self) -> impl Iterator<Item = &GatCache<T>> {
        self.structural.iter().chain(self.functional.iter())
    }
}

fn add<T: Scalar>(mut a: Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    a.add_assign(b).expect("same shape");
    a
}

impl<T: Scalar> FusionParams<T> {
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        cfg: &FusionConfig,
        variant: FusionVariant,
        structural_dim: usize,
        functional_dim: usize,
    ) -> Result<Self> {
        let width = cfg.gat.heads * cfg.gat.head_dim;
        if width == 0 || cfg.heads == 0 || !width.is_multiple_of(cfg.heads) {
            return Err(Error::InvalidArgument(format!(
                "node width {width} is not divisible by {} attention heads",
                cfg.heads
            )));
        }
        let gat_structural = variant.uses(Modality::Structural).then(|| GatParams::init(rng, &cfg.gat, structural_dim));
        let gat_functional = variant.uses(Modality::Functional).then(|| GatParams::init(rng, &cfg.gat, functional_dim));
        let dual = variant == FusionVariant::Dual;
        let s_to_f = dual.then(|| CrossAttention::init(rng, width));
        let f_to_s = dual.then(|| CrossAttention::init(rng, width));
        let fused = if variant.is_multimodal() { 2 * width } else { width };
        Ok(FusionParams {
            variant,
            heads: cfg.heads,
            gat_structural,
            gat_functional,
            s_to_f,
            f_to_s,
            mlp: Mlp::init(rng, fused, cfg.hidden_dim, cfg.classes),
        })
    }

    pub fn fused_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    fn encode(gat: Option<&GatParams<T>>, g: Option<&BrainGraph>, m: Modality) -> Result<Option<(Tensor<T>, GatCache<T>)>> {
        match gat {
            None => Ok(None),
            Some(p) => {
                let g = g.ok_or_else(|| Error::InvalidArgument(format!("missing {} graph", m.name())))?;
                let (h, cache) = p.forward(g)?;
                Ok(Some((h.values, cache)))
            }
        }
    }

    /// Fused subject vector `[G^s ‖ G^f]` (or the single modality's `G`).
    pub fn forward_subject(&self, g: &SubjectGraphs) -> Result<(Vec<T>, SubjectCache<T>)> {
        let s = Self::encode(self.gat_structural.as_ref(), g.structural.as_ref(), Modality::Structural)?;
        let f = Self::encode(self.gat_functional.as_ref(), g.functional.as_ref(), Modality::Functional)?;
        let n = s.as_ref().or(f.as_ref()).map(|(h, _)| h.rows()).unwrap_or(0);
        let mut cache = SubjectCache { n, structural: None, functional: None, s_to_f: None, f_to_s: None };
        let z = match (s, f) {
            (Some((hs, cs)), Some((hf, cf))) => {
                if hs.rows() != hf.rows() {
                    return Err(Error::Shape(format!("{} structural vs {} functional nodes", hs.rows(), hf.rows())));
                }
                cache.structural = Some(cs);
                cache.functional = Some(cf);
                match (&self.s_to_f, &self.f_to_s) {
                    (Some(sf), Some(fs)) => {
                        let (hf2, c_sf) = sf.forward(&hf, &hs, self.heads)?;
                        let (hs2, c_fs) = fs.forward(&hs, &hf, self.heads)?;
                        cache.s_to_f = Some(c_sf);
                        cache.f_to_s = Some(c_fs);
                        [mean_rows(&hs2)?, mean_rows(&hf2)?].concat()
                    }
                    _ => [mean_rows(&hs)?, mean_rows(&hf)?].concat(),
                }
            }
            (Some((hs, cs)), None) => {
                cache.structural = Some(cs);
                mean_rows(&hs)?
            }
            (None, Some((hf, cf))) => {
                cache.functional = Some(cf);
                mean_rows(&hf)?
            }
            (None, None) => return Err(Error::InvalidArgument("fusion model has no encoder".into())),
        };
        Ok((z, cache))
    }

    /// Accumulates gradients of everything below the MLP given `dL/dz`.
    pub fn backward_subject(&self, c: &SubjectCache<T>, dz: &[T], grad: &mut FusionParams<T>) {
        let (dhs, dhf) = match (&c.structural, &c.functional) {
            (Some(_), Some(_)) => {
                let w = dz.len() / 2;
                let gs = global_average_pool_backward(&dz[..w], c.n);
                let gf = global_average_pool_backward(&dz[w..], c.n);
                match (&self.s_to_f, &self.f_to_s, &c.s_to_f, &c.f_to_s) {
                    (Some(sf), Some(fs), Some(c_sf), Some(c_fs)) => {
                        let (dhs_q, dhf_kv) = fs.backward(c_fs, &gs, grad.f_to_s.as_mut().expect("dual grads"));
                        let (dhf_q, dhs_kv) = sf.backward(c_sf, &gf, grad.s_to_f.as_mut().expect("dual grads"));
                        (Some(add(dhs_q, &dhs_kv)), Some(add(dhf_q, &dhf_kv)))
                    }
                    _ => (Some(gs), Some(gf)),
                }
            }
            (Some(_), None) => (Some(global_average_pool_backward(dz, c.n)), None),
            (None, _) => (None, Some(global_average_pool_backward(dz, c.n))),
        };
        if let (Some(p), Some(cache), Some(d)) = (&self.gat_structural, &c.structural, dhs) {
            p.backward(cache, &d, grad.gat_structural.as_mut().expect("structural grads"));
        }
        if let (Some(p), Some(cache), Some(d)) = (&self.gat_functional, &c.functional, dhf) {
            p.backward(cache, &d, grad.gat_functional.as_mut().expect("functional grads"));
        }
    }

    fn forward_batch(&self, batch: &[&SubjectGraphs]) -> Result<(Tensor<T>, Vec<SubjectCache<T>>)> {
        let outs: Vec<(Vec<T>, SubjectCache<T>)> =
            batch.par_iter().map(|g| self.forward_subject(g)).collect::<Result<_>>()?;
        let w = self.fused_dim();
        let mut z = Vec::with_capacity(batch.len() * w);
        let mut caches = Vec::with_capacity(batch.len());
        for (v, c) in outs {
            if v.len() != w {
                return Err(Error::Shape(format!("fused width {} vs MLP input {w}", v.len())));
            }
            z.extend(v);
            caches.push(c);
        }
        Ok((Tensor::from_parts(vec![batch.len(), w], z), caches))
    }

    /// Mean cross-entropy over the batch; gradients are added to `grad`.
    /// Per-subject work runs in parallel and is reduced in batch order.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        batch: &[&SubjectGraphs],
        labels: &[usize],
        dropout: f64,
        rng: &mut R,
        grad: &mut FusionParams<T>,
    ) -> Result<T>
    where
        FusionParams<T>: Clone,
    {
        let (z, caches) = self.forward_batch(batch)?;
        let (logits, mlp_cache) = self.mlp.forward(&z, dropout, true, rng)?;
        let ce = cross_entropy_with_softmax(&logits, labels)?;
        let dz = self.mlp.backward(&mlp_cache, &ce.grad, &mut grad.mlp);
        let template = grad.zeroed();
        let parts: Vec<FusionParams<T>> = caches
            .par_iter()
            .enumerate()
            .map(|(b, c)| {
                let mut g = template.clone();
                self.backward_subject(c, dz.row(b), &mut g);
                g
            })
            .collect();
        for p in &parts {
            grad.accumulate(p);
        }
        Ok(ce.loss)
    }

    /// Evaluation-mode class probabilities, `batch × C`.
    pub fn predict_proba(&self, batch: &[&SubjectGraphs]) -> Result<Tensor<T>> {
        let (z, _) = self.forward_batch(batch)?;
        softmax(&self.mlp.evaluate(&z)?, 1)
    }
}
