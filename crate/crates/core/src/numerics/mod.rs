//! Differentiable tensor substrate.

mod gradcheck;
mod optim;
mod graph;
pub(crate) mod kernels;
mod params;
mod tensor;

pub use gradcheck::grad_check;
pub use optim::Adam;
pub use graph::{Graph, NodeRecord, Var};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::{gemm, MatRef, Scalar, Tensor, Trans};
