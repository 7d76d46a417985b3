//! Dense row-major tensors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense real array with an explicit shape, stored row-major.
///
/// A rank-0 tensor (empty shape) holds exactly one value.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn volume(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("extents must be positive, got {shape:?}")));
        }
        if volume(&shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {} values, got {}",
                volume(&shape),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; volume(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<T>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    /// Stacks equal-length rows into a `rows × width` matrix.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().position(|r| r.len() != width) {
            return Err(Error::shape(format!(
                "row {bad} has width {}, expected {width}",
                rows[bad].len()
            )));
        }
        Self::new(vec![rows.len(), width], rows.concat())
    }

    /// Stacks tensors of identical shape along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(volume(&shape));
        for (i, t) in items.iter().enumerate() {
            if t.shape() != first.shape() {
                return Err(Error::shape(format!(
                    "stack item {i} has shape {:?}, expected {:?}",
                    t.shape(),
                    first.shape()
                )));
            }
            data.extend_from_slice(t.data());
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!(
                "item() needs one element, shape is {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if volume(&shape) != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        debug_assert_eq!(self.rank(), 2);
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    /// Number of leading-axis entries.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Elements per leading-axis entry.
    pub fn row_len(&self) -> usize {
        self.data.len() / self.rows()
    }

    /// Selects leading-axis entries, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        if self.rank() == 0 || idx.is_empty() {
            return Err(Error::shape("select_rows needs rank >= 1 and a non-empty index"));
        }
        let w = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            if i >= self.rows() {
                return Err(Error::shape(format!("row {i} out of range {}", self.rows())));
            }
            data.extend_from_slice(&self.data[i * w..(i + 1) * w]);
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Self::new(shape, data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "axpy between {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::lit(x.to_f64_lossy()))
                .collect(),
        }
    }
}
