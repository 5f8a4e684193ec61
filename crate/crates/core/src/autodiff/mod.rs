//! Minimal tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles. Leaves
//! are either trainable variables or constants; only paths that start at a
//! trainable leaf are differentiated. Complex quantities are carried as
//! separate real and imaginary tensors.

mod check;
mod checkpoint;
mod graph;
mod params;
mod tensor;

pub use check::{grad_check, grad_check_sampled, GradCheckOptions};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use graph::{Gradients, Graph, OpKind, Var, POW_GUARD};
pub use params::{xavier_uniform, Params};
pub use tensor::Tensor;
