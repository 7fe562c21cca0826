//! Minimal dense-tensor engine: tensors, a reverse-mode tape, transformer
//! building blocks and the Adam optimizer.

mod scalar;
mod tape;
mod tensor;

pub mod gradcheck;
pub mod nn;
pub mod optim;

pub use scalar::Real;
pub use tape::{bce_with_logits, sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
