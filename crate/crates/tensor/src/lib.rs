//! Minimal reverse-mode autodiff over dense NCHW tensors, generic over the
//! floating point type.

pub mod conv;
mod error;
pub mod graph;
pub mod optim;
pub mod params;
mod scalar;
mod tensor;

pub use conv::{ConvGeom, PadMode};
pub use error::{Result, TensorError};
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use optim::Adam;
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
