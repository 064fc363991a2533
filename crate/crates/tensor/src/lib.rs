//! Small reverse-mode automatic differentiation engine over dense matrices.
//!
//! Everything is generic over [`Scalar`] so that models can be trained in
//! `f32` and gradient-checked in `f64` with the same code.

mod graph;
mod optim;
mod scalar;

pub use graph::{Gradients, Graph, Mat, Var};
pub use optim::AdamW;
pub use scalar::Scalar;

pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
