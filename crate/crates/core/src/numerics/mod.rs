//! Dense tensors, reverse-mode differentiation, parameters and gradient checks.

mod gradcheck;
mod graph;
mod params;
mod real;
mod tensor;

pub use gradcheck::{grad_check, grad_check_inputs, relative_error, GradCheckReport, ParamCheck};
pub use graph::{Graph, Var};
pub use params::{Gradients, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
