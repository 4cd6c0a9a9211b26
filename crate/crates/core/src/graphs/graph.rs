use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::{ngt::write_atomic, Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Structural,
    Functional,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Structural => "structural",
            Modality::Functional => "functional",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structural" => Ok(Modality::Structural),
            "functional" => Ok(Modality::Functional),
            other => Err(Error::InvalidArgument(format!("unknown modality {other:?}"))),
        }
    }
}

/// Undirected edge stored once with `i < j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Undirected weighted graph over atlas ROIs with per-node features.
#[derive(Clone, Debug, PartialEq)]
pub struct BrainGraph {
    pub modality: Modality,
    pub node_features: Tensor<f64>,
    pub edges: Vec<Edge>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    n_nodes: usize,
    directed: bool,
    modality: Modality,
    node_features: Vec<Vec<f64>>,
    edges: Vec<Edge>,
}

impl BrainGraph {
    pub fn new(modality: Modality, node_features: Tensor<f64>, edges: Vec<Edge>) -> Result<Self> {
        let g = BrainGraph { modality, node_features, edges };
        g.validate()?;
        Ok(g)
    }

    pub fn n_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_features.rank() != 2 {
            return Err(Error::Shape(format!("node features must be N×d, got {:?}", self.node_features.shape())));
        }
        self.node_features.check_finite("node features")?;
        let n = self.n_nodes();
        let mut prev: Option<(usize, usize)> = None;
        for e in &self.edges {
            if e.i >= e.j || e.j >= n || !e.w.is_finite() {
                return Err(Error::InvalidArgument(format!("bad edge ({}, {}, {}) in {n}-node graph", e.i, e.j, e.w)));
            }
            if prev.is_some_and(|p| p >= (e.i, e.j)) {
                return Err(Error::InvalidArgument(format!("edges not sorted or duplicated at ({}, {})", e.i, e.j)));
            }
            prev = Some((e.i, e.j));
        }
        Ok(())
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_nodes()];
        for e in &self.edges {
            d[e.i] += 1;
            d[e.j] += 1;
        }
        d
    }

    /// Sorted neighbor lists; with `self_loops` each node also lists itself.
    pub fn neighbors(&self, self_loops: bool) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = (0..self.n_nodes()).map(|i| if self_loops { vec![i] } else { vec![] }).collect();
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        adj.iter_mut().for_each(|a| a.sort_unstable());
        adj
    }

    pub fn features<T: Scalar>(&self) -> Tensor<T> {
        self.node_features.cast()
    }

    /// Relabels node `v` as `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> BrainGraph {
        let (n, d) = (self.n_nodes(), self.feature_dim());
        let mut feats = Tensor::zeros(&[n, d]);
        for v in 0..n {
            feats.row_mut(perm[v]).copy_from_slice(self.node_features.row(v));
        }
        let mut edges: Vec<Edge> = self
            .edges
            .iter()
            .map(|e| {
                let (a, b) = (perm[e.i], perm[e.j]);
                Edge { i: a.min(b), j: a.max(b), w: e.w }
            })
            .collect();
        edges.sort_by_key(|e| (e.i, e.j));
        BrainGraph { modality: self.modality, node_features: feats, edges }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let file = GraphFile {
            n_nodes: self.n_nodes(),
            directed: false,
            modality: self.modality,
            node_features: (0..self.n_nodes()).map(|i| self.node_features.row(i).to_vec()).collect(),
            edges: self.edges.clone(),
        };
        Ok(serde_json::to_vec(&file)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let f: GraphFile = serde_json::from_slice(bytes)?;
        if f.directed {
            return Err(Error::parse("brain graph", "directed graphs are not supported"));
        }
        if f.node_features.len() != f.n_nodes {
            return Err(Error::parse("brain graph", format!("{} feature rows for {} nodes", f.node_features.len(), f.n_nodes)));
        }
        let d = f.node_features.first().map_or(0, Vec::len);
        if f.node_features.iter().any(|r| r.len() != d) {
            return Err(Error::parse("brain graph", "ragged node features"));
        }
        let feats = Tensor::new(vec![f.n_nodes, d], f.node_features.concat())?;
        BrainGraph::new(f.modality, feats, f.edges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::parse(path.display().to_string(), msg),
            other => other,
        })
    }
}
