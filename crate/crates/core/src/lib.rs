//! Few-shot learning laboratory.
//!
//! Builds synthetic class-conditional datasets, induces controlled class
//! imbalance at the dataset and task level, meta-trains a family of few-shot
//! learners over episodes, and reports per-condition accuracy differences.
//!
//! The numeric core is generic over the scalar type (see [`scalar::Scalar`]);
//! the aliases below pin the `f64` instantiation used by the harness and CLI.

pub mod backbone;
pub mod data;
pub mod episodes;
pub mod error;
pub mod harness;
pub mod imbalance;
pub mod learners;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete `f64` instantiations used throughout the harness and CLI.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = tensor::Tape<f64>;
pub type ParamSet64 = params::ParamSet<f64>;
pub type ClassPool64 = data::ClassPool<f64>;
pub type Episode64 = episodes::Episode<f64>;
pub type LearnerState64 = learners::LearnerState<f64>;
pub type Optimizer64 = optim::Optimizer<f64>;

/// `f32` counterparts for the numeric core.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape32 = tensor::Tape<f32>;
pub type ParamSet32 = params::ParamSet<f32>;
