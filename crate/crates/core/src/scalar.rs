//! Floating-point element type shared by the tensor, model and meta layers.

use std::fmt::{Debug, Display};

use num_traits::Float;

/// Element type of a [`Tensor`](crate::autodiff::Tensor): `f32` or `f64`.
///
/// Task data and on-disk formats are always `f64`; values cross into the
/// generic layers through [`Scalar::of`] and leave through
/// [`Scalar::as_f64`].
pub trait Scalar:
    Float + Debug + Display + Default + Send + Sync + 'static
{
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
