//! Category-agnostic keypoint localization with a one-stage transformer,
//! plus the procedural desk-scale data and evaluation tooling around it.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the data
//! generator and metrics work in `f64`.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub type TensorF64 = tensor::Tensor<f64>;
pub type TensorF32 = tensor::Tensor<f32>;
pub type TapeF64 = tape::Tape<f64>;
pub type TapeF32 = tape::Tape<f32>;
pub type ScapeModelF64 = model::ScapeModel<f64>;
pub type ScapeModelF32 = model::ScapeModel<f32>;
