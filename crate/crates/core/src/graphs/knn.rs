use std::collections::BTreeMap;

use super::{cosine_similarity_matrix, fisher_z, pearson_fcn, BrainGraph, Edge, Modality, SimilarityMatrix};
use crate::dataio::RoiTimeSeries;
use crate::numerics::{Scalar, Tensor};
use crate::{Error, Result};

pub const DEFAULT_K: usize = 10;

/// Keeps each node's `k` most similar other nodes (ties go to the lower
/// index) and returns the union of those selections as undirected edges
/// weighted by similarity.
pub fn knn_graph(sim: &SimilarityMatrix, k: usize, node_features: Tensor<f64>, modality: Modality) -> Result<BrainGraph> {
    let n = sim.n();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("K must lie in [1, {}), got {k}", n)));
    }
    if node_features.rank() != 2 || node_features.rows() != n {
        return Err(Error::Shape(format!("node features {:?} for {n} nodes", node_features.shape())));
    }
    let mut edges = BTreeMap::new();
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        order.sort_by(|&a, &b| sim.get(i, b).total_cmp(&sim.get(i, a)).then(a.cmp(&b)));
        for &j in &order[..k] {
            let (a, b) = (i.min(j), i.max(j));
            edges.insert((a, b), sim.get(a, b));
        }
    }
    let edges = edges.into_iter().map(|((i, j), w)| Edge { i, j, w }).collect();
    BrainGraph::new(modality, node_features, edges)
}

/// Cosine KNN graph over ROI embeddings, which also serve as node features.
pub fn build_structural_graph<T: Scalar>(embeddings: &Tensor<T>, k: usize) -> Result<BrainGraph> {
    let sim = cosine_similarity_matrix(embeddings)?;
    knn_graph(&sim, k, embeddings.cast(), Modality::Structural)
}

/// Fisher-z connectivity KNN graph; node `i`'s features are row `i` of the
/// transformed connectivity matrix.
pub fn build_functional_graph(ts: &RoiTimeSeries, k: usize) -> Result<BrainGraph> {
    let z = fisher_z(&pearson_fcn(ts)?)?;
    let feats = z.values.clone();
    knn_graph(&z, k, feats, Modality::Functional)
}
