//! Primitive forward/backward kernels.

use rand::Rng;

use super::scalar::gemm;
use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Negative slope used by attention-logit LeakyReLU.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Variance guard for layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

fn require_matrix<T: Scalar>(t: &Tensor<T>, name: &str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::Shape(format!(
            "{name} must be a matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `a · b` for `a: m×k`, `b: k×n`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = require_matrix(a, "lhs")?;
    let (k2, n) = require_matrix(b, "rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul {m}x{k} · {k2}x{n}")));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(
        m,
        k,
        n,
        T::one(),
        (a.data(), k, 1),
        (b.data(), n, 1),
        T::zero(),
        (&mut out, n, 1),
    );
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = require_matrix(a, "lhs")?;
    let (n, k2) = require_matrix(b, "rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul_nt {m}x{k} · ({n}x{k2})ᵀ")));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(
        m,
        k,
        n,
        T::one(),
        (a.data(), k, 1),
        (b.data(), 1, k),
        T::zero(),
        (&mut out, n, 1),
    );
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `aᵀ · b` for `a: k×m`, `b: k×n`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = require_matrix(a, "lhs")?;
    let (k2, n) = require_matrix(b, "rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul_tn ({k}x{m})ᵀ · {k2}x{n}")));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(
        m,
        k,
        n,
        T::one(),
        (a.data(), 1, m),
        (b.data(), n, 1),
        T::zero(),
        (&mut out, n, 1),
    );
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Gradients of `c = a·b` with respect to `a` and `b`.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((matmul_nt(grad_out, b)?, matmul_tn(a, grad_out)?))
}

fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// In-place max-subtracted softmax over contiguous rows of width `width`.
pub fn softmax_rows_inplace<T: Scalar>(data: &mut [T], width: usize) {
    if width == 0 {
        return;
    }
    for row in data.chunks_mut(width) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_layout(x.shape(), axis)?;
    let mut out = x.clone();
    if inner == 1 {
        softmax_rows_inplace(out.data_mut(), len);
        return Ok(out);
    }
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| data[idx(j)]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for j in 0..len {
                let e = (data[idx(j)] - max).exp();
                data[idx(j)] = e;
                sum += e;
            }
            for j in 0..len {
                data[idx(j)] /= sum;
            }
        }
    }
    Ok(out)
}

/// Backward of softmax given its output `y`: `dx = y ⊙ (dy − Σ dy⊙y)`.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if y.shape() != dy.shape() {
        return Err(Error::Shape("softmax_backward operand shapes differ".into()));
    }
    let (outer, len, inner) = axis_layout(y.shape(), axis)?;
    let (yd, gd) = (y.data(), dy.data());
    let mut out = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let dot: T = (0..len).map(|j| yd[idx(j)] * gd[idx(j)]).sum();
            for j in 0..len {
                out[idx(j)] = yd[idx(j)] * (gd[idx(j)] - dot);
            }
        }
    }
    Ok(Tensor::from_parts(y.shape().to_vec(), out))
}

/// Per-row statistics retained by [`layer_norm`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormStats<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Layer normalization over the last axis with population variance.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &[T],
    bias: &[T],
    eps: T,
) -> Result<(Tensor<T>, LayerNormStats<T>)> {
    let width = *x
        .shape()
        .last()
        .ok_or_else(|| Error::Shape("layer_norm on a scalar".into()))?;
    if width < 2 && !x.is_empty() {
        return Err(Error::Shape("layer_norm needs a normalized extent >= 2".into()));
    }
    if gain.len() != width || bias.len() != width {
        return Err(Error::Shape(format!(
            "layer_norm affine width {} / {} vs {width}",
            gain.len(),
            bias.len()
        )));
    }
    let rows = x.len() / width;
    let n = T::of(width as f64);
    let mut normalized = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x.data()[r * width..(r + 1) * width];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        for j in 0..width {
            let h = (row[j] - mean) * is;
            normalized[r * width + j] = h;
            out[r * width + j] = h * gain[j] + bias[j];
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), out),
        LayerNormStats {
            normalized: Tensor::from_parts(x.shape().to_vec(), normalized),
            inv_std,
        },
    ))
}

/// Backward of [`layer_norm`]. Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<T: Scalar>(
    stats: &LayerNormStats<T>,
    gain: &[T],
    dy: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let width = gain.len();
    let rows = dy.len() / width;
    let n = T::of(width as f64);
    let xhat = stats.normalized.data();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgain = vec![T::zero(); width];
    let mut dbias = vec![T::zero(); width];
    let mut dxhat = vec![T::zero(); width];
    for r in 0..rows {
        let base = r * width;
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for j in 0..width {
            let g = dy.data()[base + j];
            dgain[j] += g * xhat[base + j];
            dbias[j] += g;
            dxhat[j] = g * gain[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[base + j];
        }
        mean_d /= n;
        mean_dx /= n;
        let is = stats.inv_std[r];
        for j in 0..width {
            dx[base + j] = is * (dxhat[j] - mean_d - xhat[base + j] * mean_dx);
        }
    }
    (Tensor::from_parts(dy.shape().to_vec(), dx), dgain, dbias)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward of ReLU evaluated at the pre-activation `x`.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    zip_map(x, dy, |v, g| if v > T::zero() { g } else { T::zero() })
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { v * slope })
}

pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>, slope: T) -> Tensor<T> {
    zip_map(x, dy, |v, g| if v >= T::zero() { g } else { g * slope })
}

/// ELU with unit scale.
pub fn elu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(elu_scalar)
}

pub fn elu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    zip_map(x, dy, |v, g| if v > T::zero() { g } else { g * v.exp() })
}

pub(crate) fn elu_scalar<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        v.exp_m1()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

pub(crate) fn gelu_scalar<T: Scalar>(v: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (v + T::of(GELU_A) * v * v * v);
    half * v * (T::one() + inner.tanh())
}

pub(crate) fn gelu_grad_scalar<T: Scalar>(v: T) -> T {
    let half = T::of(0.5);
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let inner = c * (v + a * v * v * v);
    let th = inner.tanh();
    let sech2 = T::one() - th * th;
    half * (T::one() + th) + half * v * sech2 * c * (T::one() + T::of(3.0) * a * v * v)
}

pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    zip_map(x, dy, |v, g| g * gelu_grad_scalar(v))
}

fn zip_map<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    assert_eq!(x.shape(), dy.shape(), "elementwise backward shape mismatch");
    let data = x.data().iter().zip(dy.data()).map(|(&v, &g)| f(v, g)).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Survivor scale factors of one dropout draw (`0` or `1/(1-rate)`).
#[derive(Clone, Debug)]
pub struct DropoutMask<T> {
    pub scale: Vec<T>,
}

/// Inverted dropout. In evaluation mode, or with `rate == 0`, it is the
/// identity and no mask is returned.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<DropoutMask<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let scale: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let data = x.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
    Ok((
        Tensor::from_parts(x.shape().to_vec(), data),
        Some(DropoutMask { scale }),
    ))
}

pub fn dropout_backward<T: Scalar>(mask: Option<&DropoutMask<T>>, dy: &Tensor<T>) -> Tensor<T> {
    match mask {
        None => dy.clone(),
        Some(m) => {
            let data = dy.data().iter().zip(&m.scale).map(|(&g, &s)| g * s).collect();
            Tensor::from_parts(dy.shape().to_vec(), data)
        }
    }
}

/// Loss, logit gradient and class probabilities of a softmax cross-entropy.
#[derive(Clone, Debug)]
pub struct CrossEntropy<T> {
    pub loss: T,
    pub grad: Tensor<T>,
    pub probs: Tensor<T>,
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`,
/// computed through log-sum-exp. The gradient is `(softmax − onehot)/batch`.
pub fn cross_entropy_with_softmax<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<CrossEntropy<T>> {
    let (batch, classes) = require_matrix(logits, "logits")?;
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for {batch} logit rows",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let inv_batch = T::one() / T::of(batch as f64);
    let mut probs = logits.clone();
    let mut loss = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss += lse - row[label];
        for (p, &v) in probs.row_mut(r).iter_mut().zip(row) {
            *p = (v - lse).exp();
        }
    }
    let mut grad = probs.clone();
    for (r, &label) in labels.iter().enumerate() {
        let g = grad.row_mut(r);
        g[label] -= T::one();
        g.iter_mut().for_each(|v| *v *= inv_batch);
    }
    Ok(CrossEntropy {
        loss: loss * inv_batch,
        grad,
        probs,
    })
}
