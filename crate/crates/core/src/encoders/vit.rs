//! Pre-norm 3D Vision Transformer over ROI patches.
//!
//! A batch of `B` subjects is processed as one stacked token matrix of
//! `B·(N+1)` rows (CLS first within each subject), so every linear layer is
//! a single matrix product over the whole batch.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::RoiPatchSet;
use crate::numerics::{
    cross_entropy_with_softmax, gelu, gelu_backward, mha_backward, mha_forward, param_set,
    softmax, AttentionDims, CrossEntropy, LayerNorm, LayerNormCache, Linear, Scalar, Tensor,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VitConfig {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub classes: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        VitConfig { dim: 128, depth: 6, heads: 8, mlp_dim: 512, classes: 2 }
    }
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "embedding width {} must be a positive multiple of {} heads",
                self.dim, self.heads
            )));
        }
        if self.dim < 2 || self.mlp_dim == 0 || self.classes < 2 {
            return Err(Error::InvalidArgument("degenerate transformer dimensions".into()));
        }
        Ok(())
    }
}

/// One pre-norm encoder block: `x + MHSA(LN(x))`, then `+ MLP(LN(·))`.
#[derive(Clone, Debug, PartialEq)]
pub struct VitBlock<T> {
    pub ln1: LayerNorm<T>,
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub ln2: LayerNorm<T>,
    pub mlp_in: Linear<T>,
    pub mlp_out: Linear<T>,
}

param_set!(VitBlock { ln1, query, key, value, output, ln2, mlp_in, mlp_out });

/// Intermediate values of one block forward pass.
#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    dims: AttentionDims,
    input: Tensor<T>,
    ln1: LayerNormCache<T>,
    h1: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    probs: Vec<T>,
    attn: Tensor<T>,
    ln2: LayerNormCache<T>,
    h2: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
}

impl<T> BlockCache<T> {
    /// Attention probabilities laid out `[subject][head][query][key]`.
    pub fn attention(&self) -> &[T] {
        &self.probs
    }

    pub fn dims(&self) -> AttentionDims {
        self.dims
    }
}

impl<T: Scalar> VitBlock<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, mlp_dim: usize) -> Self {
        VitBlock {
            ln1: LayerNorm::identity(dim),
            query: Linear::glorot(rng, dim, dim, false),
            key: Linear::glorot(rng, dim, dim, false),
            value: Linear::glorot(rng, dim, dim, false),
            output: Linear::glorot(rng, dim, dim, true),
            ln2: LayerNorm::identity(dim),
            mlp_in: Linear::glorot(rng, dim, mlp_dim, true),
            mlp_out: Linear::glorot(rng, mlp_dim, dim, true),
        }
    }

    pub fn zeros(dim: usize, mlp_dim: usize) -> Self {
        VitBlock {
            ln1: LayerNorm::identity(dim),
            query: Linear::zeros(dim, dim, false),
            key: Linear::zeros(dim, dim, false),
            value: Linear::zeros(dim, dim, false),
            output: Linear::zeros(dim, dim, true),
            ln2: LayerNorm::identity(dim),
            mlp_in: Linear::zeros(dim, mlp_dim, true),
            mlp_out: Linear::zeros(mlp_dim, dim, true),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.input_dim()
    }

    /// `x` stacks `batch` sequences of `seq` tokens.
    pub fn forward(&self, x: &Tensor<T>, batch: usize, seq: usize, heads: usize) -> Result<(Tensor<T>, BlockCache<T>)> {
        let d = self.dim();
        if x.rank() != 2 || x.cols() != d || x.rows() != batch * seq {
            return Err(Error::Shape(format!("block expects {}×{d} tokens, got {:?}", batch * seq, x.shape())));
        }
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("{heads} heads for width {d}")));
        }
        let dims = AttentionDims { batch, q_len: seq, kv_len: seq, heads, head_dim: d / heads };
        let (h1, ln1) = self.ln1.forward(x)?;
        let q = self.query.forward(&h1)?;
        let k = self.key.forward(&h1)?;
        let v = self.value.forward(&h1)?;
        let (attn, probs) = mha_forward(dims, q.data(), k.data(), v.data());
        let attn = Tensor::from_parts(vec![batch * seq, d], attn);
        let mut mid = self.output.forward(&attn)?;
        mid.add_assign(x)?;
        let (h2, ln2) = self.ln2.forward(&mid)?;
        let pre = self.mlp_in.forward(&h2)?;
        let act = gelu(&pre);
        let mut out = self.mlp_out.forward(&act)?;
        out.add_assign(&mid)?;
        let cache = BlockCache { dims, input: x.clone(), ln1, h1, q, k, v, probs, attn, ln2, h2, pre, act };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, c: &BlockCache<T>, dy: &Tensor<T>, grad: &mut VitBlock<T>) -> Tensor<T> {
        let dact = self.mlp_out.backward(&c.act, dy, &mut grad.mlp_out);
        let dpre = gelu_backward(&c.pre, &dact);
        let dh2 = self.mlp_in.backward(&c.h2, &dpre, &mut grad.mlp_in);
        let mut dmid = self.ln2.backward(&c.ln2, &dh2, &mut grad.ln2);
        dmid.add_assign(dy).expect("same shape");

        let dattn = self.output.backward(&c.attn, &dmid, &mut grad.output);
        let (dq, dk, dv) = mha_backward(c.dims, c.q.data(), c.k.data(), c.v.data(), &c.probs, dattn.data());
        let shape = c.h1.shape();
        let mut dh1 = self.query.backward(&c.h1, &Tensor::from_parts(shape.to_vec(), dq), &mut grad.query);
        dh1.add_assign(&self.key.backward(&c.h1, &Tensor::from_parts(shape.to_vec(), dk), &mut grad.key))
            .expect("same shape");
        dh1.add_assign(&self.value.backward(&c.h1, &Tensor::from_parts(shape.to_vec(), dv), &mut grad.value))
            .expect("same shape");
        let mut dx = self.ln1.backward(&c.ln1, &dh1, &mut grad.ln1);
        dx.add_assign(&dmid).expect("same shape");
        debug_assert_eq!(dx.shape(), c.input.shape());
        dx
    }
}

/// All learnable ViT parameters plus the (fixed) head count.
#[derive(Clone, Debug, PartialEq)]
pub struct VitParams<T> {
    pub patch_embed: Linear<T>,
    pub cls: Tensor<T>,
    pub pos: Tensor<T>,
    pub blocks: Vec<VitBlock<T>>,
    pub head: Linear<T>,
    pub heads: usize,
}

param_set!(VitParams { patch_embed, cls, pos, blocks, head });

/// Cached forward pass over a batch of subjects.
#[derive(Clone, Debug)]
pub struct VitPass<T> {
    pub batch: usize,
    pub seq: usize,
    patches: Tensor<T>,
    pub caches: Vec<BlockCache<T>>,
    /// Final tokens, `batch·seq × d`.
    pub tokens: Tensor<T>,
}

impl<T: Scalar> VitPass<T> {
    /// Per-subject `[CLS ‖ ROI_1 ‖ … ‖ ROI_N]`, shape `batch × seq·d`.
    pub fn final_representation(&self) -> Tensor<T> {
        let d = self.tokens.cols();
        Tensor::from_parts(vec![self.batch, self.seq * d], self.tokens.data().to_vec())
    }

    /// ROI tokens of subject `b` (CLS dropped), shape `N × d`.
    pub fn roi_embeddings(&self, b: usize) -> Tensor<T> {
        let d = self.tokens.cols();
        let start = (b * self.seq + 1) * d;
        let end = (b + 1) * self.seq * d;
        Tensor::from_parts(vec![self.seq - 1, d], self.tokens.data()[start..end].to_vec())
    }
}

impl<T: Scalar> VitParams<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, cfg: &VitConfig, n_rois: usize, patch_len: usize) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let scale = 1.0 / (d as f64).sqrt();
        let mut normal = |shape: &[usize]| Tensor::from_fn(shape, |_| T::of(rng.sample::<f64, _>(StandardNormal) * scale));
        let cls = normal(&[d]);
        let pos = normal(&[n_rois + 1, d]);
        Ok(VitParams {
            patch_embed: Linear::glorot(rng, patch_len, d, true),
            cls,
            pos,
            blocks: (0..cfg.depth).map(|_| VitBlock::init(rng, d, cfg.mlp_dim)).collect(),
            head: Linear::glorot(rng, (n_rois + 1) * d, cfg.classes, true),
            heads: cfg.heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.cls.len()
    }

    pub fn n_rois(&self) -> usize {
        self.pos.rows() - 1
    }

    pub fn patch_len(&self) -> usize {
        self.patch_embed.input_dim()
    }

    /// Patch projection, CLS prepend and positional table. `patches` stacks
    /// `batch·N` flattened patches; the result stacks `batch·(N+1)` tokens.
    pub fn embed(&self, patches: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, d) = (self.n_rois(), self.dim());
        if patches.rank() != 2 || patches.cols() != self.patch_len() || !patches.rows().is_multiple_of(n) {
            return Err(Error::Shape(format!(
                "expected a multiple of {n} patches of {} voxels, got {:?}",
                self.patch_len(),
                patches.shape()
            )));
        }
        let batch = patches.rows() / n;
        let proj = self.patch_embed.forward(patches)?;
        let mut tokens = Vec::with_capacity(batch * (n + 1) * d);
        for b in 0..batch {
            tokens.extend(self.cls.data().iter().zip(self.pos.row(0)).map(|(&c, &p)| c + p));
            let rows = &proj.data()[b * n * d..(b + 1) * n * d];
            tokens.extend(rows.iter().zip(&self.pos.data()[d..]).map(|(&e, &p)| e + p));
        }
        Ok(Tensor::from_parts(vec![batch * (n + 1), d], tokens))
    }

    pub fn forward(&self, patches: &Tensor<T>) -> Result<VitPass<T>> {
        let mut x = self.embed(patches)?;
        let seq = self.n_rois() + 1;
        let batch = x.rows() / seq;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block.forward(&x, batch, seq, self.heads)?;
            caches.push(cache);
            x = y;
        }
        Ok(VitPass { batch, seq, patches: patches.clone(), caches, tokens: x })
    }

    pub fn logits(&self, pass: &VitPass<T>) -> Result<Tensor<T>> {
        self.head.forward(&pass.final_representation())
    }

    /// Backpropagates `dtokens` (gradient w.r.t. the final tokens) through
    /// the blocks and the embedding.
    pub fn backward(&self, pass: &VitPass<T>, dtokens: Tensor<T>, grad: &mut VitParams<T>) {
        let mut dx = dtokens;
        for ((block, cache), g) in self.blocks.iter().zip(&pass.caches).zip(grad.blocks.iter_mut()).rev() {
            dx = block.backward(cache, &dx, g);
        }
        let (n, d) = (self.n_rois(), self.dim());
        let mut dproj = Vec::with_capacity(pass.batch * n * d);
        for b in 0..pass.batch {
            let rows = &dx.data()[b * pass.seq * d..(b + 1) * pass.seq * d];
            for (g, &v) in grad.cls.data_mut().iter_mut().zip(&rows[..d]) {
                *g += v;
            }
            for (g, &v) in grad.pos.data_mut().iter_mut().zip(rows) {
                *g += v;
            }
            dproj.extend_from_slice(&rows[d..]);
        }
        let dproj = Tensor::from_parts(vec![pass.batch * n, d], dproj);
        self.patch_embed.accumulate_param_grads(&pass.patches, &dproj, &mut grad.patch_embed);
    }

    /// Classification loss on a batch; gradients are accumulated into `grad`.
    pub fn loss_and_grad(&self, patches: &Tensor<T>, labels: &[usize], grad: &mut VitParams<T>) -> Result<CrossEntropy<T>> {
        let pass = self.forward(patches)?;
        let rep = pass.final_representation();
        let logits = self.head.forward(&rep)?;
        let ce = cross_entropy_with_softmax(&logits, labels)?;
        let drep = self.head.backward(&rep, &ce.grad, &mut grad.head);
        let dtokens = Tensor::from_parts(pass.tokens.shape().to_vec(), drep.into_data());
        self.backward(&pass, dtokens, grad);
        Ok(ce)
    }

    /// Class probabilities, `batch × C`.
    pub fn predict_proba(&self, patches: &Tensor<T>) -> Result<Tensor<T>> {
        softmax(&self.logits(&self.forward(patches)?)?, 1)
    }
}

/// Stacks patch sets into the `batch·N × p³` layout used by [`VitParams`].
pub fn stack_patches<T: Scalar>(sets: &[&RoiPatchSet]) -> Result<Tensor<T>> {
    let first = sets.first().ok_or_else(|| Error::InvalidArgument("empty patch batch".into()))?;
    let (n, len) = (first.patches.rows(), first.patches.cols());
    let mut data = Vec::with_capacity(sets.len() * n * len);
    for s in sets {
        if s.patches.shape() != first.patches.shape() {
            return Err(Error::Shape(format!("patch sets {:?} and {:?}", s.patches.shape(), first.patches.shape())));
        }
        data.extend(s.patches.data().iter().map(|&v| T::of(v as f64)));
    }
    Ok(Tensor::from_parts(vec![sets.len() * n, len], data))
}

/// Token sequence `Z_0` for one subject, `(N+1) × d`.
pub fn vit_embed_patches<T: Scalar>(patches: &RoiPatchSet, params: &VitParams<T>) -> Result<Tensor<T>> {
    params.embed(&stack_patches(&[patches])?)
}

/// `[CLS ‖ ROI_1 ‖ … ‖ ROI_N]` of one subject's final tokens.
pub fn vit_final_representation<T: Scalar>(tokens: &Tensor<T>) -> Vec<T> {
    tokens.data().to_vec()
}

/// Softmax of the classifier head applied to a final representation.
pub fn vit_classify<T: Scalar>(representation: &[T], head: &Linear<T>) -> Result<Vec<T>> {
    let x = Tensor::new(vec![1, representation.len()], representation.to_vec())?;
    Ok(softmax(&head.forward(&x)?, 1)?.into_data())
}

/// ROI token embeddings (`N × d`) of one subject in atlas order.
pub fn vit_roi_embeddings<T: Scalar>(patches: &RoiPatchSet, params: &VitParams<T>) -> Result<Tensor<T>> {
    Ok(params.forward(&stack_patches(&[patches])?)?.roi_embeddings(0))
}
