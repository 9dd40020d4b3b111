//! Dense n-dimensional arrays over a selectable scalar precision.

use crate::error::{Error, Result};
use num_traits::Float;
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Scalar type the numeric kernels are generic over. Implemented for `f32`
/// (training) and `f64` (oracle tests and gradient verification).
pub trait Real:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Human-readable precision name used by CLI output.
    const PRECISION: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const PRECISION: &'static str = "single";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const PRECISION: &'static str = "double";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Shorthand for lifting an `f64` literal into the generic scalar.
pub fn rf<R: Real>(v: f64) -> R {
    R::from_f64(v)
}

/// Dense row-major array. The product of `shape` always equals `data.len()`.
#[derive(Clone, PartialEq)]
pub struct NdArray<R> {
    shape: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> NdArray<R> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        NdArray {
            shape: shape.to_vec(),
            data: vec![R::zero(); n],
        }
    }

    pub fn full(shape: &[usize], v: R) -> Self {
        let n = shape.iter().product();
        NdArray {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: R) -> Self {
        NdArray {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<R>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shapes(shape, &[data.len()]));
        }
        Ok(NdArray {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> R) -> Self {
        let n: usize = shape.iter().product();
        NdArray {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    /// Scalar content of a one-element array.
    pub fn item(&self) -> R {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> R {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> R {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: R) {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        self.data[i * cols + j] = v;
    }

    #[inline]
    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: R) {
        debug_assert_eq!(self.shape.len(), 3);
        let (d1, d2) = (self.shape[1], self.shape[2]);
        self.data[(i * d1 + j) * d2 + k] = v;
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shapes(&self.shape, shape));
        }
        Ok(NdArray {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        NdArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(R, R) -> R) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shapes(&self.shape, &other.shape));
        }
        Ok(NdArray {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shapes(&self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> R {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute entry, zero for empty arrays.
    pub fn max_abs(&self) -> R {
        self.data
            .iter()
            .fold(R::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    /// Lossy conversion used at precision boundaries (checkpoints, metrics).
    pub fn to_f64(&self) -> NdArray<f64> {
        NdArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn from_f64(src: &NdArray<f64>) -> NdArray<R> {
        NdArray {
            shape: src.shape.clone(),
            data: src.data.iter().map(|&v| rf(v)).collect(),
        }
    }
}

impl<R: Real> fmt::Debug for NdArray<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 8 {
            write!(f, "NdArray{:?} {:?}", self.shape, self.data)
        } else {
            write!(
                f,
                "NdArray{:?} [{:?}, {:?}, ... ({} values)]",
                self.shape,
                self.data[0],
                self.data[1],
                self.data.len()
            )
        }
    }
}
