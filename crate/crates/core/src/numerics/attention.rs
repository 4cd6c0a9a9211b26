//! Batched multi-head scaled dot-product attention.
//!
//! Queries, keys and values are stacked row-major matrices of width
//! `heads * head_dim`; each batch element owns a contiguous block of
//! `q_len` (resp. `kv_len`) rows and head `h` owns columns
//! `h*head_dim .. (h+1)*head_dim`. Attention never mixes batch elements.

use super::ops::softmax_rows_inplace;
use super::scalar::gemm;
use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionDims {
    pub batch: usize,
    pub q_len: usize,
    pub kv_len: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttentionDims {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    fn prob_offset(&self, b: usize, h: usize) -> usize {
        (b * self.heads + h) * self.q_len * self.kv_len
    }

    fn check(&self, q: usize, k: usize, v: usize) {
        let w = self.width();
        assert_eq!(q, self.batch * self.q_len * w, "query buffer size");
        assert_eq!(k, self.batch * self.kv_len * w, "key buffer size");
        assert_eq!(v, self.batch * self.kv_len * w, "value buffer size");
    }
}

/// Returns the concatenated head outputs (`batch*q_len × width`) and the
/// attention probabilities laid out as `[batch][head][q][kv]`.
pub fn mha_forward<T: Scalar>(dims: AttentionDims, q: &[T], k: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
    dims.check(q.len(), k.len(), v.len());
    let w = dims.width();
    let (ql, kl, hd) = (dims.q_len, dims.kv_len, dims.head_dim);
    let scale = T::one() / T::of(hd as f64).sqrt();
    let mut probs = vec![T::zero(); dims.batch * dims.heads * ql * kl];
    let mut out = vec![T::zero(); q.len()];
    for b in 0..dims.batch {
        for h in 0..dims.heads {
            let qo = b * ql * w + h * hd;
            let ko = b * kl * w + h * hd;
            let po = dims.prob_offset(b, h);
            let p = &mut probs[po..po + ql * kl];
            gemm(ql, hd, kl, scale, (&q[qo..], w, 1), (&k[ko..], 1, w), T::zero(), (p, kl, 1));
            softmax_rows_inplace(p, kl);
            gemm(ql, kl, hd, T::one(), (p, kl, 1), (&v[ko..], w, 1), T::zero(), (&mut out[qo..], w, 1));
        }
    }
    (out, probs)
}

/// Gradients `(dq, dk, dv)` given the forward probabilities and `dout`.
pub fn mha_backward<T: Scalar>(
    dims: AttentionDims,
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    dims.check(q.len(), k.len(), v.len());
    let w = dims.width();
    let (ql, kl, hd) = (dims.q_len, dims.kv_len, dims.head_dim);
    let scale = T::one() / T::of(hd as f64).sqrt();
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dp = vec![T::zero(); ql * kl];
    for b in 0..dims.batch {
        for h in 0..dims.heads {
            let qo = b * ql * w + h * hd;
            let ko = b * kl * w + h * hd;
            let po = dims.prob_offset(b, h);
            let p = &probs[po..po + ql * kl];
            // dP = dO · Vᵀ ; dV = Pᵀ · dO
            gemm(ql, hd, kl, T::one(), (&dout[qo..], w, 1), (&v[ko..], 1, w), T::zero(), (&mut dp, kl, 1));
            gemm(kl, ql, hd, T::one(), (p, 1, kl), (&dout[qo..], w, 1), T::zero(), (&mut dv[ko..], w, 1));
            // dS = P ⊙ (dP − rowsum(dP ⊙ P)), folded with the score scale.
            for r in 0..ql {
                let pr = &p[r * kl..(r + 1) * kl];
                let dr = &mut dp[r * kl..(r + 1) * kl];
                let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &g)| a * g).sum();
                for (g, &a) in dr.iter_mut().zip(pr) {
                    *g = a * (*g - dot) * scale;
                }
            }
            gemm(ql, kl, hd, T::one(), (&dp, kl, 1), (&k[ko..], w, 1), T::zero(), (&mut dq[qo..], w, 1));
            gemm(kl, ql, hd, T::one(), (&dp, 1, kl), (&q[qo..], w, 1), T::zero(), (&mut dk[ko..], w, 1));
        }
    }
    (dq, dk, dv)
}
