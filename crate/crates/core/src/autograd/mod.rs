//! A small tape-free autograd engine: graphs are held by `Rc` links from
//! outputs to inputs and differentiated on demand.

pub mod ops;
pub mod optim;
pub mod params;
pub mod tensor;

pub use optim::{Optimizer, Variant};
pub use params::{Bound, Param, ParamSet};
pub use tensor::{grad, grad_enabled, no_grad, Array, NoGradGuard, Tensor};
