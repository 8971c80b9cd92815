//! Minimal reverse-mode automatic differentiation over dense tensors.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod params;
pub mod real;

pub use checkpoint::Checkpoint;
pub use gradcheck::{gradcheck, gradcheck_params, ParamCheckReport};
pub use graph::{Bound, Gradients, Graph, Var};
pub use params::{Param, ParamId, ParamStore};
pub use real::Real;
