//! Minimal dense reverse-mode automatic differentiation.
//!
//! Tensors store `f32`; graph values, gradients and optimizer moments are
//! kept in `f64`.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{sigmoid, softplus, Gradients, Graph, Mat, NodeId, LOG_CLAMP, NORM_GUARD};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    ElementCount { shape: Vec<usize>, len: usize },
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("loss must be a 1x1 scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
}
