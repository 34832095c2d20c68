//! Memory-layer graph networks (GMN and MemGNN) with a small
//! reverse-mode autodiff engine, graph dataset loaders, random-walk
//! diffusion embeddings and a two-timescale training loop.
//!
//! The numeric core is generic over the scalar type ([`Scalar`] is
//! implemented for `f32` and `f64`); the aliases below fix it to `f64`.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod loss;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod query;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Model64 = model::Model<f64>;
pub type GraphInput64 = model::GraphInput<f64>;
pub type GraphBatch64 = dataset::GraphBatch<f64>;
pub type Trainer64 = train::Trainer<f64>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Model32 = model::Model<f32>;
