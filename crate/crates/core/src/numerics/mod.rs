//! `f64` tensors, a reverse-mode autodiff tape over a fixed op set, momentum
//! SGD, finite-difference gradient checking, and parameter (de)serialization.

mod error;
mod gradcheck;
pub mod graph;
mod ops;
mod params;
mod sgd;
mod tensor;

pub use error::NumericsError;
pub use gradcheck::grad_check;
pub use graph::{Bindings, Gradients, Graph, NodeId, OpKind};
pub use ops::{ConvGeom, PoolGeom};
pub use params::{load_json, save_json, NamedTensor, ParamSet};
pub use sgd::{sgd_step, SgdState};
pub use tensor::Tensor;
