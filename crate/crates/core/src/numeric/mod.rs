//! Dense math, the shared-bottom network, and a finite-difference oracle.

mod fd;
mod matrix;
mod model;
mod param;

pub use fd::{central_difference, fd_gradient, max_relative_error};
pub use matrix::Matrix;
pub use model::{Activation, Example, ModelConfig, SharedBottomModel, Window};
pub use param::{Layout, ParamVector, TensorSpec};

pub(crate) use matrix::affine;
pub(crate) use param::dot;
