//! Meta-learning toolkit: MAML-style bi-level optimization with an
//! invariant (gradient-variance penalized) outer update, synthetic few-shot
//! task families with controllable distribution shift, and an experiment
//! harness.
//!
//! The numeric layers ([`autodiff`], [`model`], [`meta`]) are generic over a
//! [`Scalar`] element type. Task data, files and the harness use `f64`; the
//! aliases below name the common instantiations.

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod meta;
pub mod model;
pub mod scalar;
pub mod tasks;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type ParamVector64 = model::ParamVector<f64>;
pub type ParamVector32 = model::ParamVector<f32>;
pub type MetaState64 = meta::MetaState<f64>;
pub type MetaState32 = meta::MetaState<f32>;
