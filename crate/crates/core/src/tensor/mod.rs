//! Dense tensors, the differentiable primitives the network is built from,
//! and a finite-difference gradient checker.
//!
//! A [`Tensor`] is an immutable value. Gradient bookkeeping (the
//! `requires_grad` flag and gradient buffer) lives on the [`Tape`]: a
//! [`Var`] created by [`Tape::leaf`] is tracked, and after
//! [`Tape::backward`] its gradient is read from the returned [`Gradients`].

mod array;
pub mod gradcheck;
mod kernels;
mod scalar;
mod tape;

pub use array::{IndexMap, Tensor};
pub use gradcheck::{finite_diff_check, finite_diff_check_many, finite_diff_report, Coords, GradReport};
pub use scalar::{DType, Scalar};
pub use tape::{Gradients, Tape, Var};

#[cfg(test)]
mod tests;
