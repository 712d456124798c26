//! Desk-scale domain-generalization laboratory.
//!
//! The crate generates procedural multi-domain image datasets, builds the
//! train/val/test regimes used to study domain generalization (leave-one-
//! domain-out, classwise held-out domains, prior injection, incremental
//! domain augmentation), trains small two-branch convolutional models with
//! ERM / gradient-reversal / self-challenging / domain-feature-masking
//! trainers, and measures distribution shift with a Frechet distance over
//! Gaussian embedding summaries.
//!
//! The numeric core ([`tensor`], [`linalg`], the optimizers and masks in
//! [`train`], and the metrics in [`metrics`]) is generic over the scalar
//! type through [`scalar::Scalar`]; everything else, and the aliases below,
//! pin `f64`.

pub mod dataset;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod split;
pub mod tensor;

pub use error::{DgError, Result};

/// Crate-default tensor at 64-bit precision.
pub type Tensor = tensor::Tensor<f64>;
/// Crate-default gradient tape at 64-bit precision.
pub type Tape = tensor::Tape<f64>;
/// Crate-default gradient set at 64-bit precision.
pub type Gradients = tensor::Gradients<f64>;
