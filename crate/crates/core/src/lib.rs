//! Sparsity-aware unlearning on small CPU models.
//!
//! The pipeline is train → prune → saliency → plan → unlearn → score. All
//! numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the CLI and checkpoints use.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod models;
pub mod params;
pub mod pruning;
pub mod rng;
pub mod saliency;
pub mod sau;
pub mod scalar;
pub mod tensor;
pub mod theory;
pub mod unlearn;

pub use error::{Error, Result};
pub use pruning::SparsityMask;
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type ParamSet = params::ParamSet<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type CharLm = models::CharLm<f64>;
pub type Mlp = models::Mlp<f64>;
pub type SaliencyMap = saliency::SaliencyMap<f64>;
pub type SauPlan = sau::SauPlan<f64>;
pub type SoftmaxToy = theory::SoftmaxToy<f64>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type ParamSet32 = params::ParamSet<f32>;
pub type CharLm32 = models::CharLm<f32>;
pub type Mlp32 = models::Mlp<f32>;
