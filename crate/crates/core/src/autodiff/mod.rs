//! Dense `f64` tensors with a reverse-mode differentiation tape, the
//! smooth-L1 loss, Adam, and a finite-difference gradient checker.

mod adam;
mod gradcheck;
pub mod loss;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheck};
pub use tape::{Csr, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Fill value for masked attention scores; finite so arithmetic stays finite.
pub const MASK_FILL: f64 = -1e30;

#[cfg(test)]
mod tests;
