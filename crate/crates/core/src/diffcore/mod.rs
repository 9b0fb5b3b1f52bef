//! Dense tensors, a reverse-mode tape and a finite-difference checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{Scalar, Tensor};
