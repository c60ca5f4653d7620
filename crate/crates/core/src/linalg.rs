//! Small dense matrices. Dimensions here are the state and control dimensions
//! of the model, so naive O(n^3) routines are all that is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major dense matrix. Serialized as a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<T>>", into = "Vec<Vec<T>>", bound = "T: Real")]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data of length {} does not fit {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, T::one())
    }

    pub fn scaled_identity(n: usize, s: T) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = s;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// `out = self * v`
    #[inline]
    pub fn mul_vec_into(&self, v: &[T], out: &mut [T]) {
        debug_assert_eq!(v.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o = row
                .iter()
                .zip(v)
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        }
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows];
        self.mul_vec_into(v, &mut out);
        out
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut data = vec![T::zero(); self.rows * other.cols];
        for r in 0..self.rows {
            for c in 0..other.cols {
                let mut acc = T::zero();
                for k in 0..self.cols {
                    acc += self.get(r, k) * other.get(k, c);
                }
                data[r * other.cols + c] = acc;
            }
        }
        Ok(Self {
            rows: self.rows,
            cols: other.cols,
            data,
        })
    }

    /// `self * self^T`, the covariance rate of `sigma dW`.
    pub fn gram(&self) -> Self {
        self.matmul(&self.transpose()).expect("conformable")
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// Largest absolute row sum.
    pub fn inf_norm(&self) -> T {
        (0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .map(|x| x.abs())
                    .sum::<T>()
            })
            .fold(T::zero(), T::max)
    }

    /// `v^T self v`
    pub fn quad_form(&self, v: &[T]) -> T {
        let mv = self.mul_vec(v);
        mv.iter().zip(v).map(|(&a, &b)| a * b).sum()
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting. Matrices
    /// whose pivots fall below `1e-12` times their scale are rejected as singular.
    pub fn inverse(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::invalid("inverse of a non-square matrix"));
        }
        let n = self.rows;
        let scale = self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        if scale == T::zero() || !scale.is_finite() {
            return Err(Error::SingularSigma);
        }
        let tol = scale * T::lit(1e-12);
        let mut a = self.data.clone();
        let mut inv = Self::identity(n).data;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| {
                    a[i * n + col]
                        .abs()
                        .partial_cmp(&a[j * n + col].abs())
                        .expect("finite entries")
                })
                .expect("nonempty range");
            if a[pivot * n + col].abs() <= tol {
                return Err(Error::SingularSigma);
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(pivot * n + k, col * n + k);
                    inv.swap(pivot * n + k, col * n + k);
                }
            }
            let p = a[col * n + col];
            for k in 0..n {
                a[col * n + k] /= p;
                inv[col * n + k] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r * n + col];
                if f == T::zero() {
                    continue;
                }
                for k in 0..n {
                    a[r * n + k] = a[r * n + k] - f * a[col * n + k];
                    inv[r * n + k] = inv[r * n + k] - f * inv[col * n + k];
                }
            }
        }
        Ok(Self {
            rows: n,
            cols: n,
            data: inv,
        })
    }
}

impl<T: Real> TryFrom<Vec<Vec<T>>> for Matrix<T> {
    type Error = Error;

    fn try_from(rows: Vec<Vec<T>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::invalid("ragged matrix rows"));
        }
        Self::from_row_major(r, c, rows.into_iter().flatten().collect())
    }
}

impl<T: Real> From<Matrix<T>> for Vec<Vec<T>> {
    fn from(m: Matrix<T>) -> Self {
        m.data.chunks(m.cols).map(<[T]>::to_vec).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_2x2() {
        let m = Matrix::from_row_major(2, 2, vec![2.0, 1.0, 1.0, 3.0]).unwrap();
        let inv = m.inverse().unwrap();
        let prod = m.matmul(&inv).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let want: f64 = if r == c { 1.0 } else { 0.0 };
                assert!((prod.get(r, c) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn singular_is_rejected() {
        let m = Matrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert_eq!(m.inverse().unwrap_err(), Error::SingularSigma);
        let z = Matrix::<f64>::from_row_major(1, 1, vec![0.0]).unwrap();
        assert_eq!(z.inverse().unwrap_err(), Error::SingularSigma);
    }

    #[test]
    fn serde_as_rows() {
        let m: Matrix<f64> = serde_json::from_str("[[1, 0], [0.5, 2]]").unwrap();
        assert_eq!(m.get(1, 0), 0.5);
        assert_eq!(serde_json::to_string(&m).unwrap(), "[[1.0,0.0],[0.5,2.0]]");
        assert!(serde_json::from_str::<Matrix<f64>>("[[1, 0], [2]]").is_err());
    }
}
