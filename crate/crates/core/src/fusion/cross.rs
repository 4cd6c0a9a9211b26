use rand::Rng;

use super::pool::mean_rows;
use crate::encoders::NodeEmbeddings;
use crate::numerics::{mha_backward, mha_forward, param_set, AttentionDims, LayerNorm, LayerNormCache, Linear, Scalar, Tensor};
use crate::{Error, Result};

/// One attention direction: queries from one modality, keys and values
/// from the other, multi-head output projection, then `LN(query + ·)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttention<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub norm: LayerNorm<T>,
}

param_set!(CrossAttention { query, key, value, output, norm });

#[derive(Clone, Debug)]
pub struct CrossAttentionCache<T> {
    dims: AttentionDims,
    hq: Tensor<T>,
    hkv: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    probs: Vec<T>,
    attn: Tensor<T>,
    norm: LayerNormCache<T>,
}

impl<T> CrossAttentionCache<T> {
    /// Attention probabilities laid out `[head][query][key]`.
    pub fn attention(&self) -> &[T] {
        &self.probs
    }

    pub fn dims(&self) -> AttentionDims {
        self.dims
    }
}

impl<T: Scalar> CrossAttention<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, width: usize) -> Self {
        CrossAttention {
            query: Linear::glorot(rng, width, width, false),
            key: Linear::glorot(rng, width, width, false),
            value: Linear::glorot(rng, width, width, false),
            output: Linear::glorot(rng, width, width, true),
            norm: LayerNorm::identity(width),
        }
    }

    pub fn zeros(width: usize) -> Self {
        CrossAttention {
            query: Linear::zeros(width, width, false),
            key: Linear::zeros(width, width, false),
            value: Linear::zeros(width, width, false),
            output: Linear::zeros(width, width, true),
            norm: LayerNorm::identity(width),
        }
    }

    pub fn width(&self) -> usize {
        self.query.input_dim()
    }

    pub fn forward(&self, hq: &Tensor<T>, hkv: &Tensor<T>, heads: usize) -> Result<(Tensor<T>, CrossAttentionCache<T>)> {
        let w = self.width();
        if hq.rank() != 2 || hkv.rank() != 2 || hq.cols() != w || hkv.cols() != w {
            return Err(Error::Shape(format!("cross-attention width {w}, got {:?} and {:?}", hq.shape(), hkv.shape())));
        }
        if hq.rows() != hkv.rows() {
            return Err(Error::Shape(format!("node counts differ: {} vs {}", hq.rows(), hkv.rows())));
        }
        if heads == 0 || !w.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("{heads} heads for width {w}")));
        }
        let n = hq.rows();
        let dims = AttentionDims { batch: 1, q_len: n, kv_len: n, heads, head_dim: w / heads };
        let q = self.query.forward(hq)?;
        let k = self.key.forward(hkv)?;
        let v = self.value.forward(hkv)?;
        let (attn, probs) = mha_forward(dims, q.data(), k.data(), v.data());
        let attn = Tensor::from_parts(vec![n, w], attn);
        let mut res = self.output.forward(&attn)?;
        res.add_assign(hq)?;
        let (out, norm) = self.norm.forward(&res)?;
        let cache = CrossAttentionCache { dims, hq: hq.clone(), hkv: hkv.clone(), q, k, v, probs, attn, norm };
        Ok((out, cache))
    }

    /// Returns `(dL/dquery_src, dL/dkv_src)`.
    pub fn backward(&self, c: &CrossAttentionCache<T>, dout: &Tensor<T>, grad: &mut CrossAttention<T>) -> (Tensor<T>, Tensor<T>) {
        let dres = self.norm.backward(&c.norm, dout, &mut grad.norm);
        let dattn = self.output.backward(&c.attn, &dres, &mut grad.output);
        let (dq, dk, dv) = mha_backward(c.dims, c.q.data(), c.k.data(), c.v.data(), &c.probs, dattn.data());
        let shape = c.hq.shape().to_vec();
        let mut dhq = self.query.backward(&c.hq, &Tensor::from_parts(shape.clone(), dq), &mut grad.query);
        dhq.add_assign(&dres).expect("same shape");
        let mut dhkv = self.key.backward(&c.hkv, &Tensor::from_parts(shape.clone(), dk), &mut grad.key);
        dhkv.add_assign(&self.value.backward(&c.hkv, &Tensor::from_parts(shape, dv), &mut grad.value))
            .expect("same shape");
        (dhq, dhkv)
    }
}

/// Refines `query_src` by attending over `kv_src`.
pub fn cross_attention_block<T: Scalar>(
    query_src: &NodeEmbeddings<T>,
    kv_src: &NodeEmbeddings<T>,
    params: &CrossAttention<T>,
    heads: usize,
) -> Result<NodeEmbeddings<T>> {
    let (values, _) = params.forward(&query_src.values, &kv_src.values, heads)?;
    Ok(NodeEmbeddings { modality: query_src.modality, values })
}

/// `H'f` attends from functional queries to structural keys (`s_to_f`),
/// `H's` the reverse (`f_to_s`); returns `[GAP(H's) ‖ GAP(H'f)]`.
pub fn dual_cross_attention_fuse<T: Scalar>(
    hs: &NodeEmbeddings<T>,
    hf: &NodeEmbeddings<T>,
    s_to_f: &CrossAttention<T>,
    f_to_s: &CrossAttention<T>,
    heads: usize,
) -> Result<Vec<T>> {
    let (hf2, _) = s_to_f.forward(&hf.values, &hs.values, heads)?;
    let (hs2, _) = f_to_s.forward(&hs.values, &hf.values, heads)?;
    let mut z = mean_rows(&hs2)?;
    z.extend(mean_rows(&hf2)?);
    Ok(z)
}
