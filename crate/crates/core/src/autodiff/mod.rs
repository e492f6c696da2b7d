//! Reverse-mode differentiation over [`Tensor`](crate::tensor::Tensor)s.
//!
//! Only the primitives the network and its losses need are provided. Every
//! primitive is covered by a central finite-difference check, see
//! [`grad_check`].

mod gradcheck;
mod graph;

pub use gradcheck::{
    grad_check, primitive_cases, project, GradCase, GradCheckReport, GRAD_EPS, GRAD_TOLERANCE,
    KINK_RETRIES,
};
pub use graph::{Graph, Var};

pub(crate) use graph::separable_valid;

use crate::tensor::ShapeError;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
