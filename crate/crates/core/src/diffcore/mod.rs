//! Dense `f64` tensors with tape-based reverse-mode gradients.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{analytic_gradients, grad_check, grad_check_many, relative_error, GradCheckReport, ABS_FLOOR};
pub use tape::{Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
