//! Three-path training for domain-shifted binary image classification.
//!
//! A common path sees both domains while two auxiliary paths each see one.
//! Every path is a backbone, a projection head producing unit-norm
//! embeddings, and a linear classifier. Paths are trained jointly with a
//! focal classification loss, a multi-positive contrastive loss, and
//! losses that align classwise mean embeddings across paths.
//!
//! The numerical core is generic over [`Scalar`] (`f32`/`f64`); the
//! training harness runs in `f64` (see [`Real`]).

pub mod data;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod losses;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod util;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Scalar type used by training, data and evaluation.
pub type Real = f64;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = diffcore::Graph<f64>;
pub type ParameterSet64 = diffcore::ParameterSet<f64>;
