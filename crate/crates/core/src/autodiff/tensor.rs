use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array.
///
/// A tensor with a single element is treated as a scalar by the
/// broadcasting ops regardless of its rank (`[]`, `[1]`, `[1, 1]`).
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn scalar(x: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Converts `f64` data (task tensors, files) into this element type.
    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        if self.is_scalar() {
            Some(self.data[0])
        } else {
            None
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn reshaped(&self, shape: &[usize]) -> Self {
        Tensor::from_parts(shape.to_vec(), self.data.clone())
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

// Kernels used by the graph evaluator. Reductions run in index order.

pub(crate) fn zip_broadcast<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(a.shape.clone(), data)
    } else if b.is_scalar() {
        let y = b.data[0];
        Tensor::from_parts(a.shape.clone(), a.data.iter().map(|&x| f(x, y)).collect())
    } else {
        let x = a.data[0];
        Tensor::from_parts(b.shape.clone(), b.data.iter().map(|&y| f(x, y)).collect())
    }
}

pub(crate) fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, k) = (a.shape[0], a.shape[1]);
    let m = b.shape[1];
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

pub(crate) fn transpose<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (n, m) = (a.shape[0], a.shape[1]);
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a.data[i * m + j];
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

pub(crate) fn sum<T: Scalar>(a: &Tensor<T>) -> T {
    a.data.iter().fold(T::zero(), |acc, &x| acc + x)
}

/// Row-wise softmax over the last axis of a 2-D tensor.
pub(crate) fn softmax_rows<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (n, c) = (a.shape[0], a.shape[1]);
    let mut out = vec![T::zero(); n * c];
    for i in 0..n {
        let row = &a.data[i * c..(i + 1) * c];
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let mut z = T::zero();
        for (o, &x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
            *o = (x - max).exp();
            z = z + *o;
        }
        for o in &mut out[i * c..(i + 1) * c] {
            *o = *o / z;
        }
    }
    Tensor::from_parts(vec![n, c], out)
}

/// Mean over rows of `logsumexp(row) - row[label]`.
pub(crate) fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> T {
    let (n, c) = (logits.shape[0], logits.shape[1]);
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate().take(n) {
        let row = &logits.data[i * c..(i + 1) * c];
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let z = row.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp());
        total = total + (max + z.ln() - row[label]);
    }
    total / T::of_usize(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_extent() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b).data(), &[3.0, 7.0]);
        assert_eq!(transpose(&a).data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 1000.0]).unwrap();
        let s = softmax_rows(&a);
        for r in 0..2 {
            let z: f64 = s.data()[r * 3..r * 3 + 3].iter().sum();
            assert!((z - 1.0).abs() < 1e-15);
        }
        assert!(s.is_finite());
    }
}
