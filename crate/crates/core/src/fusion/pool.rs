use crate::encoders::NodeEmbeddings;
use crate::graphs::Modality;
use crate::numerics::{Scalar, Tensor};
use crate::{Error, Result};

/// Graph-level embedding of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphEmbedding<T> {
    pub modality: Modality,
    pub values: Vec<T>,
}

/// Mean over the node axis.
pub fn global_average_pool<T: Scalar>(h: &NodeEmbeddings<T>) -> Result<GraphEmbedding<T>> {
    Ok(GraphEmbedding { modality: h.modality, values: mean_rows(&h.values)? })
}

pub(crate) fn mean_rows<T: Scalar>(h: &Tensor<T>) -> Result<Vec<T>> {
    let n = h.rows();
    if n == 0 || h.rank() != 2 {
        return Err(Error::Shape(format!("cannot pool node matrix {:?}", h.shape())));
    }
    let mut out = vec![T::zero(); h.cols()];
    for i in 0..n {
        for (o, &v) in out.iter_mut().zip(h.row(i)) {
            *o += v;
        }
    }
    let inv = T::one() / T::of(n as f64);
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// Spreads a pooled gradient evenly back over `n` nodes.
pub fn global_average_pool_backward<T: Scalar>(dg: &[T], n: usize) -> Tensor<T> {
    let inv = T::one() / T::of(n as f64);
    let row: Vec<T> = dg.iter().map(|&g| g * inv).collect();
    Tensor::from_parts(vec![n, dg.len()], row.repeat(n))
}

/// `[G^s ‖ G^f]`, structural first.
pub fn concat_fuse<T: Scalar>(gs: &GraphEmbedding<T>, gf: &GraphEmbedding<T>) -> Result<Vec<T>> {
    if gs.values.len() != gf.values.len() {
        return Err(Error::Shape(format!(
            "graph embeddings of width {} and {}",
            gs.values.len(),
            gf.values.len()
        )));
    }
    let mut z = gs.values.clone();
    z.extend_from_slice(&gf.values);
    Ok(z)
}
