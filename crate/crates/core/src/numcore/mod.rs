//! Dense tensors, a reverse-mode differentiation graph, Adam, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
mod ops;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{check_all_params, finite_difference_check, primitive_errors};
pub use graph::{Gradients, Graph, NodeId};
pub use ops::NORM_FLOOR;
pub use tensor::Tensor;

pub(crate) use ops::{sigmoid_f64, softplus};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("node {0} is not a leaf")]
    NotLeaf(usize),
    #[error("node {0} is not a parameter")]
    NotParam(usize),
    #[error("{0}")]
    InvalidArgument(String),
}

#[cfg(test)]
mod tests;
