use crate::error::{Error, Result};
use crate::scalar::Real;

use super::{Layout, Shape, Tensor};

/// Dense row-major 2D matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!("matrix {rows}x{cols} has an empty extent")));
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} given {} values",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline(always)]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Views an `h = w = 1` tensor as an `N x C` matrix.
    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.h() != 1 || s.w() != 1 {
            return Err(Error::shape(format!(
                "tensor {s} is not a 2D N x C matrix (needs h = w = 1)"
            )));
        }
        Ok(Matrix::from_fn(s.n(), s.c(), |n, c| t.get(n, c, 0, 0)))
    }

    /// Inverse of [`Matrix::from_tensor`]: an `N x C x 1 x 1` NCHW tensor.
    pub fn into_tensor(self) -> Result<Tensor<T>> {
        let shape = Shape::new(self.rows, self.cols, 1, 1)?;
        Tensor::new(shape, Layout::Nchw, self.data)
    }

    pub fn max_rel_diff(&self, other: &Matrix<T>) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(format!(
                "cannot compare {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut worst = 0.0f64;
        for (&x, &y) in self.data.iter().zip(&other.data) {
            let (x, y) = (x.as_f64(), y.as_f64());
            let d = if x.is_nan() || y.is_nan() {
                f64::INFINITY
            } else if x == y {
                0.0
            } else {
                (x - y).abs() / x.abs().max(y.abs()).max(1.0)
            };
            worst = worst.max(d);
        }
        Ok(worst)
    }

    pub fn approx_equal(&self, other: &Matrix<T>, rel_tol: f64) -> Result<bool> {
        Ok(self.max_rel_diff(other)? <= rel_tol)
    }
}
