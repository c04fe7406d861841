//! Dense `f64` tensors, a reverse-mode tape and a finite-difference oracle.

mod gradcheck;
mod tape;
mod tensor;

pub mod opset;

pub use gradcheck::{finite_difference_check, finite_difference_check_sampled};
pub use tape::{concat, grad_of, linear, Gradients, Tape, Var};
pub use tensor::Tensor;
