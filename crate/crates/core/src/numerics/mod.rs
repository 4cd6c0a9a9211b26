//! Dense tensor kernels with explicit backward passes.
//!
//! There is no autodiff graph: every differentiable operation exposes a
//! forward function and a matching backward function, and composite layers
//! chain them by hand. All kernels are generic over [`Scalar`] so the same
//! code trains in `f32` and is gradient-checked in `f64`.

mod adam;
mod attention;
mod gradcheck;
mod layers;
pub mod ngt;
mod ops;
mod params;
mod scalar;
mod seed;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use attention::{mha_backward, mha_forward, AttentionDims};
pub use gradcheck::{grad_check, grad_check_params, DEFAULT_PERTURBATION};
pub use layers::{LayerNorm, LayerNormCache, Linear};
pub use ops::{
    cross_entropy_with_softmax, dropout, dropout_backward, elu, elu_backward, gelu,
    gelu_backward, layer_norm, layer_norm_backward, leaky_relu, leaky_relu_backward,
    matmul, matmul_backward, matmul_nt, matmul_tn, relu, relu_backward, softmax,
    softmax_backward, softmax_rows_inplace, CrossEntropy, DropoutMask, LayerNormStats,
    DEFAULT_LEAKY_SLOPE, LAYER_NORM_EPS,
};
pub use params::{flatten_params, unflatten_params, ParamSet};
pub(crate) use params::param_set;
pub use scalar::Scalar;
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use scalar::gemm;
pub use seed::{derive_seed, seeded_rng};
