//! Massively parallel importance sampling for plate-structured graphical models.
//!
//! Every latent variable gets `K` proposal samples per plate instance, and the estimator
//! averages the importance ratio over all combinations of sample indices. That average is a
//! product of small factor tensors, so it is computed by variable elimination in log space.
//! Posterior expectations, marginal weights and conditional index tables are read off as
//! gradients of the log estimator with respect to zero-valued source terms.

pub mod contraction;
pub mod error;
pub mod estimators;
pub mod model;
pub mod oracle;
pub mod sampler;
pub mod scalar;
pub mod stats;
pub mod tape;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::Axis;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type LogTensor64 = tensor::LogTensor<f64>;
pub type LogTensor32 = tensor::LogTensor<f32>;
pub type GradTape64 = tape::GradTape<f64>;
pub type GradTape32 = tape::GradTape<f32>;
