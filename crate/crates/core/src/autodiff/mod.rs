//! Reverse-mode automatic differentiation whose gradients are graph nodes.
//!
//! [`Graph::grad`] writes the backward pass into the same graph it reads, so
//! a gradient can be fed back into further computation and differentiated
//! again. That is what lets the outer meta-update differentiate through
//! inner-loop gradient steps and through a penalty built from gradients.

mod check;
mod graph;
mod tensor;

pub use check::{check_grad, relative_error, GradCheckEntry, GradCheckReport, REL_ERR_FLOOR};
pub use graph::{Graph, NodeId, Op};
pub use tensor::Tensor;
