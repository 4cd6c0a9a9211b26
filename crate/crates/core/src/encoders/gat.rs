//! Single-layer multi-head graph attention with self-loops.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graphs::{BrainGraph, Modality};
use crate::numerics::{param_set, Linear, Scalar, Tensor, DEFAULT_LEAKY_SLOPE};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatConfig {
    pub heads: usize,
    pub head_dim: usize,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig { heads: 4, head_dim: 16 }
    }
}

/// Stacked per-head projections (`heads·head_dim × d_in`, no bias) and
/// attention vectors (`heads × 2·head_dim`, source half first).
#[derive(Clone, Debug, PartialEq)]
pub struct GatParams<T> {
    pub weight: Linear<T>,
    pub attention: Tensor<T>,
}

param_set!(GatParams { weight, attention });

/// Node embeddings of one modality, `N × heads·head_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddings<T> {
    pub modality: Modality,
    pub values: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct GatCache<T> {
    features: Tensor<T>,
    neighbors: Vec<Vec<usize>>,
    projected: Tensor<T>,
    /// Pre-activation scores and attention weights per head, aligned with
    /// `neighbors`: `scores[k][i][n]` for neighbor `neighbors[i][n]`.
    scores: Vec<Vec<Vec<T>>>,
    alpha: Vec<Vec<Vec<T>>>,
    aggregated: Tensor<T>,
}

impl<T> GatCache<T> {
    /// Attention weights `alpha[head][node]` over `neighbors()[node]`.
    pub fn alpha(&self) -> &[Vec<Vec<T>>] {
        &self.alpha
    }

    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }
}

fn leaky<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * T::of(DEFAULT_LEAKY_SLOPE)
    }
}

fn elu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        v.exp_m1()
    }
}

impl<T: Scalar> GatParams<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, cfg: &GatConfig, d_in: usize) -> Self {
        let width = cfg.heads * cfg.head_dim;
        let limit = (6.0 / (2 * cfg.head_dim + 1) as f64).sqrt();
        GatParams {
            weight: Linear::glorot(rng, d_in, width, false),
            attention: Tensor::from_fn(&[cfg.heads, 2 * cfg.head_dim], |_| T::of(rng.random_range(-limit..limit))),
        }
    }

    pub fn heads(&self) -> usize {
        self.attention.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.attention.cols() / 2
    }

    pub fn input_dim(&self) -> usize {
        self.weight.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.heads() * self.head_dim()
    }

    pub fn forward(&self, graph: &BrainGraph) -> Result<(NodeEmbeddings<T>, GatCache<T>)> {
        self.forward_features(graph.features(), graph.neighbors(true), graph.modality)
    }

    /// `neighbors[i]` must list every node attended by `i`, itself included.
    pub fn forward_features(
        &self,
        features: Tensor<T>,
        neighbors: Vec<Vec<usize>>,
        modality: Modality,
    ) -> Result<(NodeEmbeddings<T>, GatCache<T>)> {
        if features.rank() != 2 || features.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "GAT expects node features of width {}, got {:?}",
                self.input_dim(),
                features.shape()
            )));
        }
        let n = features.rows();
        if neighbors.len() != n || neighbors.iter().any(|nb| nb.is_empty() || nb.iter().any(|&j| j >= n)) {
            return Err(Error::InvalidArgument("neighbor lists do not match the node set".into()));
        }
        let (heads, hd) = (self.heads(), self.head_dim());
        let width = heads * hd;
        let projected = self.weight.forward(&features)?;
        let mut scores = Vec::with_capacity(heads);
        let mut alpha = Vec::with_capacity(heads);
        let mut aggregated = Tensor::zeros(&[n, width]);
        for k in 0..heads {
            let a = self.attention.row(k);
            let part = |i: usize, off: usize| -> T {
                let z = &projected.row(i)[k * hd..(k + 1) * hd];
                z.iter().zip(&a[off..off + hd]).map(|(&x, &w)| x * w).sum()
            };
            let src: Vec<T> = (0..n).map(|i| part(i, 0)).collect();
            let dst: Vec<T> = (0..n).map(|j| part(j, hd)).collect();
            let mut head_scores = Vec::with_capacity(n);
            let mut head_alpha = Vec::with_capacity(n);
            for i in 0..n {
                let pre: Vec<T> = neighbors[i].iter().map(|&j| src[i] + dst[j]).collect();
                let e: Vec<T> = pre.iter().map(|&v| leaky(v)).collect();
                let max = e.iter().copied().fold(T::neg_infinity(), T::max);
                let exp: Vec<T> = e.iter().map(|&v| (v - max).exp()).collect();
                let z: T = exp.iter().copied().sum();
                let al: Vec<T> = exp.into_iter().map(|v| v / z).collect();
                let out = &mut aggregated.row_mut(i)[k * hd..(k + 1) * hd];
                for (&j, &w) in neighbors[i].iter().zip(&al) {
                    for (o, &x) in out.iter_mut().zip(&projected.row(j)[k * hd..(k + 1) * hd]) {
                        *o += w * x;
                    }
                }
                head_scores.push(pre);
                head_alpha.push(al);
            }
            scores.push(head_scores);
            alpha.push(head_alpha);
        }
        let values = aggregated.map(elu);
        let cache = GatCache { features, neighbors, projected, scores, alpha, aggregated };
        Ok((NodeEmbeddings { modality, values }, cache))
    }

    /// Accumulates parameter gradients and returns `dL/d(features)`.
    pub fn backward(&self, c: &GatCache<T>, dout: &Tensor<T>, grad: &mut GatParams<T>) -> Tensor<T> {
        let (heads, hd) = (self.heads(), self.head_dim());
        let n = c.features.rows();
        let slope = T::of(DEFAULT_LEAKY_SLOPE);
        let dagg: Vec<T> = c
            .aggregated
            .data()
            .iter()
            .zip(dout.data())
            .map(|(&x, &g)| if x > T::zero() { g } else { g * x.exp() })
            .collect();
        let mut dproj = Tensor::zeros(&[n, heads * hd]);
        for k in 0..heads {
            let a = self.attention.row(k).to_vec();
            let cols = k * hd..(k + 1) * hd;
            let mut dsrc = vec![T::zero(); n];
            let mut ddst = vec![T::zero(); n];
            for i in 0..n {
                let gi = &dagg[i * heads * hd + k * hd..i * heads * hd + (k + 1) * hd];
                let al = &c.alpha[k][i];
                let dal: Vec<T> = c.neighbors[i]
                    .iter()
                    .map(|&j| gi.iter().zip(&c.projected.row(j)[cols.clone()]).map(|(&g, &x)| g * x).sum())
                    .collect();
                for (&j, &w) in c.neighbors[i].iter().zip(al) {
                    for (d, &g) in dproj.row_mut(j)[cols.clone()].iter_mut().zip(gi) {
                        *d += w * g;
                    }
                }
                let dot: T = al.iter().zip(&dal).map(|(&w, &g)| w * g).sum();
                for ((&j, (&w, &g)), &pre) in c.neighbors[i].iter().zip(al.iter().zip(&dal)).zip(&c.scores[k][i]) {
                    let de = w * (g - dot);
                    let dpre = if pre > T::zero() { de } else { de * slope };
                    dsrc[i] += dpre;
                    ddst[j] += dpre;
                }
            }
            let ga = grad.attention.row_mut(k);
            for i in 0..n {
                let z = c.projected.row(i)[cols.clone()].to_vec();
                for c2 in 0..hd {
                    ga[c2] += dsrc[i] * z[c2];
                    ga[hd + c2] += ddst[i] * z[c2];
                }
                let row = &mut dproj.row_mut(i)[cols.clone()];
                for c2 in 0..hd {
                    row[c2] += dsrc[i] * a[c2] + ddst[i] * a[hd + c2];
                }
            }
        }
        self.weight.backward(&c.features, &dproj, &mut grad.weight)
    }
}

/// One GAT layer on a brain graph.
pub fn gat_layer<T: Scalar>(graph: &BrainGraph, params: &GatParams<T>) -> Result<NodeEmbeddings<T>> {
    Ok(params.forward(graph)?.0)
}
