//! Minimal tensor autograd used by the super-resolution and detection models.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`). Tests run the
//! gradient checks in `f64`; training defaults to `f32`.

mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
mod params;
mod scalar;
mod tensor;

pub use graph::{CustomOp, Grads, Graph, Var};
pub use kernels::ConvGeom;
pub use layers::{Conv2d, ConvSpec, ConvTranspose2d};
pub use optim::{Adam, StepDecay};
pub use params::{Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type TensorF32 = Tensor<f32>;
pub type TensorF64 = Tensor<f64>;
