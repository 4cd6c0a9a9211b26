//! Multimodal brain-graph classification with graph attention and dual
//! cross-attention fusion.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense tensors, hand-written forward/backward kernels, Adam
//!   and a finite-difference gradient checker.
//! * [`dataio`]: atlas, volumes, time series, file formats and the synthetic
//!   multi-site cohort generator.
//! * [`harmonize`]: covariate residualization and ComBat site harmonization.
//! * [`graphs`]: cosine / Pearson-Fisher-z similarity and KNN brain graphs.
//! * [`encoders`]: the 3D vision transformer and the graph attention encoder.
//! * [`fusion`]: concatenation and dual cross-attention fusion heads with the
//!   shared MLP classifier.
//! * [`pipeline`]: stratified k-fold training, metrics, reports and t-tests.

pub mod dataio;
pub mod encoders;
mod error;
pub mod fusion;
pub mod graphs;
pub mod harmonize;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
