//! Reverse-mode differentiation over dense matrices, with the layers,
//! integrator and optimizer the neural operators need.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod ode;
pub mod optim;
pub mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use nn::{Bound, ParamStore};
pub use ode::{ode_integrate, uniform_sample_times};
pub use optim::RmsProp;
pub use tensor::Tensor;
