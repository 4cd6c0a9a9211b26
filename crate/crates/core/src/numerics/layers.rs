use rand::Rng;

use super::ops::{layer_norm, layer_norm_backward, LayerNormStats, LAYER_NORM_EPS};
use super::scalar::gemm;
use super::{ParamSet, Scalar, Tensor};
use crate::{Error, Result};

/// Affine map `y = x·Wᵀ + b` with `W` stored as `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize, bias: bool) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let weight = Tensor::from_fn(&[output, input], |_| T::of(rng.random_range(-limit..limit)));
        Linear {
            weight,
            bias: bias.then(|| Tensor::zeros(&[output])),
        }
    }

    pub fn zeros(input: usize, output: usize, bias: bool) -> Self {
        Linear {
            weight: Tensor::zeros(&[output, input]),
            bias: bias.then(|| Tensor::zeros(&[output])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `x` is `rows × in` (any rank whose trailing extents multiply to `in`
    /// is accepted as long as the row count is the leading extent).
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (input, output) = (self.input_dim(), self.output_dim());
        if x.cols() != input {
            return Err(Error::Shape(format!(
                "linear expects width {input}, got {:?}",
                x.shape()
            )));
        }
        let rows = x.rows();
        let mut out = vec![T::zero(); rows * output];
        if let Some(b) = &self.bias {
            for r in 0..rows {
                out[r * output..(r + 1) * output].copy_from_slice(b.data());
            }
        }
        let beta = if self.bias.is_some() { T::one() } else { T::zero() };
        gemm(
            rows,
            input,
            output,
            T::one(),
            (x.data(), input, 1),
            (self.weight.data(), 1, input),
            beta,
            (&mut out, output, 1),
        );
        Ok(Tensor::from_parts(vec![rows, output], out))
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grad: &mut Linear<T>) -> Tensor<T> {
        self.accumulate_param_grads(x, dy, grad);
        self.input_grad(dy, x.shape())
    }

    /// Parameter gradients only, for layers whose input is frozen data.
    pub fn accumulate_param_grads(&self, x: &Tensor<T>, dy: &Tensor<T>, grad: &mut Linear<T>) {
        let (input, output) = (self.input_dim(), self.output_dim());
        let rows = x.rows();
        gemm(
            output,
            rows,
            input,
            T::one(),
            (dy.data(), 1, output),
            (x.data(), input, 1),
            T::one(),
            (grad.weight.data_mut(), input, 1),
        );
        if let Some(gb) = grad.bias.as_mut() {
            let gb = gb.data_mut();
            for r in 0..rows {
                for (g, &d) in gb.iter_mut().zip(&dy.data()[r * output..(r + 1) * output]) {
                    *g += d;
                }
            }
        }
    }

    pub fn input_grad(&self, dy: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
        let (input, output) = (self.input_dim(), self.output_dim());
        let rows = dy.rows();
        let mut dx = vec![T::zero(); rows * input];
        gemm(
            rows,
            output,
            input,
            T::one(),
            (dy.data(), output, 1),
            (self.weight.data(), input, 1),
            T::zero(),
            (&mut dx, input, 1),
        );
        Tensor::from_parts(input_shape.to_vec(), dx)
    }
}

impl<T: Scalar> ParamSet<T> for Linear<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}bias"), b));
        }
    }
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        out.push(&mut self.weight);
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
    }
}

/// Learnable affine layer normalization over the last axis.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

pub type LayerNormCache<T> = LayerNormStats<T>;

impl<T: Scalar> LayerNorm<T> {
    /// Unit gain, zero bias.
    pub fn identity(width: usize) -> Self {
        LayerNorm {
            gain: Tensor::full(&[width], T::one()),
            bias: Tensor::zeros(&[width]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LayerNormCache<T>)> {
        layer_norm(x, self.gain.data(), self.bias.data(), T::of(LAYER_NORM_EPS))
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, dy: &Tensor<T>, grad: &mut LayerNorm<T>) -> Tensor<T> {
        let (dx, dg, db) = layer_norm_backward(cache, self.gain.data(), dy);
        for (a, b) in grad.gain.data_mut().iter_mut().zip(dg) {
            *a += b;
        }
        for (a, b) in grad.bias.data_mut().iter_mut().zip(db) {
            *a += b;
        }
        dx
    }
}

impl<T: Scalar> ParamSet<T> for LayerNorm<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}gain"), &self.gain));
        out.push((format!("{prefix}bias"), &self.bias));
    }
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        out.push(&mut self.gain);
        out.push(&mut self.bias);
    }
}
