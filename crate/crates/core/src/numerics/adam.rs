use serde::{Deserialize, Serialize};

use super::{ParamSet, Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    /// Coupled L2 coefficient, added to the gradient before the moments.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamConfig {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment buffers and step counter for one parameter set.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: ParamSet<T>>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }

    /// Applies one bias-corrected Adam update to `params`.
    pub fn step<P: ParamSet<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads: Vec<&Tensor<T>> = grads.named_tensors().into_iter().map(|(_, t)| t).collect();
        adam_step(params.tensors_mut(), &grads, self)
    }
}

/// One Adam update over matched lists of parameters and gradients.
pub fn adam_step<T: Scalar>(
    params: Vec<&mut Tensor<T>>,
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape(format!(
                "adam: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = T::of(1.0 - c.beta1.powi(t));
    let bc2 = T::of(1.0 - c.beta2.powi(t));
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (lr, wd, eps) = (T::of(c.learning_rate), T::of(c.weight_decay), T::of(c.epsilon));
    for (i, p) in params.into_iter().enumerate() {
        let g = grads[i].data();
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j] + wd * *w;
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::<f64>::from_fn(&[3], |i| i as f64);
        let g = Tensor::<f64>::zeros(&[3]);
        let mut s = AdamState::new(&p, AdamConfig::new(0.1, 0.0));
        s.step(&mut p, &g).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001; bias-corrected both equal 1, so the step is
        // lr * 1 / (1 + eps).
        let mut p = Tensor::<f64>::zeros(&[2]);
        let g = Tensor::<f64>::full(&[2], 1.0);
        let mut s = AdamState::new(&p, AdamConfig::new(0.1, 0.0));
        s.step(&mut p, &g).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert_eq!(p.data()[0], p.data()[1]);
    }

    #[test]
    fn weight_decay_is_coupled_into_gradient() {
        let mut p = Tensor::<f64>::full(&[1], 2.0);
        let g = Tensor::<f64>::zeros(&[1]);
        let mut s = AdamState::new(&p, AdamConfig::new(0.1, 0.5));
        s.step(&mut p, &g).unwrap();
        // effective gradient 1.0 > 0 so the parameter shrinks by ~lr
        assert!((p.data()[0] - (2.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let mut s = AdamState::new(&p, AdamConfig::new(0.1, 0.0));
        let g = Tensor::<f64>::zeros(&[3]);
        assert!(s.step(&mut p, &g).is_err());
        assert_eq!(s.step, 0);
    }
}
