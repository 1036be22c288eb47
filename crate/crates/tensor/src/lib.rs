//! Minimal dense-array numerics with reverse-mode automatic differentiation,
//! a seeded splittable RNG, and SGD/Adam optimizers.
//!
//! Everything is generic over the scalar type (f32 or f64) via [`Scalar`];
//! concrete aliases for the common f32 instantiation live at the crate root.

pub mod check;
pub mod error;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use optim::{Bindings, OptimizerKind, OptimizerState, Param, ParamStore};
pub use rng::SeedRng;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Graph32 = Graph<f32>;
pub type ParamStore32 = ParamStore<f32>;
pub type OptimizerState32 = OptimizerState<f32>;
