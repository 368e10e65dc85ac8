//! Dense kernels for the small per-block covariance matrices.
//!
//! Blocks are at most `d × d` and usually much smaller, so everything here is
//! a straightforward row-major loop. All covariance arithmetic in the crate
//! goes through [`cholesky`] and [`CholeskyFactor::quad_form`].

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Copy of the rows in `rows`, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    /// Copy of the columns in `cols`, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, cols.len());
        for i in 0..self.rows {
            let src = self.row(i);
            for (dst, &c) in out.row_mut(i).iter_mut().zip(cols) {
                *dst = src[c];
            }
        }
        out
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Symmetric matrix stored in full.
///
/// Symmetry is exact: every constructor writes `(i, j)` and `(j, i)` from the
/// same value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds from the lower triangle of `f(i, j)`, `j <= i`.
    pub fn from_lower_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds from explicit rows; the input must already be exactly symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        for i in 0..dim {
            for j in 0..i {
                if data[i * dim + j] != data[j * dim + i] {
                    return Err(Error::NumericalFailure(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(SymMatrix { dim, data })
    }

    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        let rows: Vec<Vec<f64>> = data.chunks(dim.max(1)).map(<[f64]>::to_vec).collect();
        if dim == 0 {
            return Ok(SymMatrix::zeros(0));
        }
        SymMatrix::from_rows(&rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| self.data[i * self.dim..(i + 1) * self.dim].to_vec())
            .collect()
    }

    pub fn diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.dim).map(move |i| self.get(i, i))
    }

    pub fn mean_diagonal(&self) -> f64 {
        if self.dim == 0 {
            return 0.0;
        }
        self.diagonal().sum::<f64>() / self.dim as f64
    }

    pub fn max_diagonal(&self) -> f64 {
        self.diagonal().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().sum()
    }

    /// Principal submatrix on `idx`, in the given order.
    pub fn submatrix(&self, idx: &[usize]) -> SymMatrix {
        SymMatrix::from_lower_fn(idx.len(), |i, j| self.get(idx[i], idx[j]))
    }

    pub fn frobenius_distance(&self, other: &SymMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

/// Lower Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    dim: usize,
    lower: Vec<f64>,
    log_det: f64,
}

/// Pivots at or below this fraction of the largest diagonal entry are rejected.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

pub fn cholesky(a: &SymMatrix) -> Result<CholeskyFactor> {
    let n = a.dim();
    let tol = PIVOT_TOLERANCE * a.max_diagonal().max(0.0);
    let mut l = vec![0.0; n * n];
    let mut log_det = 0.0;
    for j in 0..n {
        let mut pivot = a.get(j, j);
        for p in 0..j {
            pivot -= l[j * n + p] * l[j * n + p];
        }
        if !(pivot > tol) {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let ljj = pivot.sqrt();
        l[j * n + j] = ljj;
        log_det += ljj.ln();
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(CholeskyFactor {
        dim: n,
        lower: l,
        log_det: 2.0 * log_det,
    })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn lower(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// `vᵀ A⁻¹ v` via forward substitution `L y = v`.
    pub fn quad_form(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        let mut y = vec![0.0; self.dim];
        Ok(self.quad_form_with(v, &mut y))
    }

    /// Same as [`quad_form`](Self::quad_form) with caller-provided scratch of
    /// length `dim`; lengths are the caller's responsibility.
    pub fn quad_form_with(&self, v: &[f64], y: &mut [f64]) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            let mut s = v[i];
            for (lij, yj) in row.iter().zip(y.iter()) {
                s -= lij * yj;
            }
            let yi = s / self.lower[i * n + i];
            y[i] = yi;
            acc += yi * yi;
        }
        acc
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.dim;
        SymMatrix::from_lower_fn(n, |i, j| (0..=j).map(|p| self.lower(i, p) * self.lower(j, p)).sum())
    }
}

/// `a + eps·I`.
pub fn regularize(a: &SymMatrix, eps: f64) -> SymMatrix {
    let mut out = a.clone();
    for i in 0..a.dim() {
        out.set(i, i, a.get(i, i) + eps);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        let f = cholesky(&SymMatrix::identity(3)).unwrap();
        assert_eq!(f.reconstruct(), SymMatrix::identity(3));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(f.lower(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(f.log_det(), 0.0);
    }

    #[test]
    fn cholesky_diagonal() {
        let f = cholesky(&sym(&[&[4.0, 0.0], &[0.0, 9.0]])).unwrap();
        assert_eq!(f.lower(0, 0), 2.0);
        assert_eq!(f.lower(1, 1), 3.0);
        assert_eq!(f.lower(1, 0), 0.0);
        assert!((f.log_det() - 36f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cholesky_two_by_two_log_det() {
        let f = cholesky(&sym(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert!((f.log_det() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite_and_singular() {
        assert!(matches!(
            cholesky(&sym(&[&[1.0, 2.0], &[2.0, 1.0]])),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
        assert!(matches!(
            cholesky(&sym(&[&[1.0, 1.0], &[1.0, 1.0]])),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(cholesky(&SymMatrix::zeros(2)).is_err());
    }

    #[test]
    fn pivot_tolerance_is_scale_invariant() {
        let tiny = regularize(&SymMatrix::identity(2), 0.0);
        let scaled = SymMatrix::from_lower_fn(2, |i, j| tiny.get(i, j) * 1e-200);
        assert!(cholesky(&scaled).is_ok());
    }

    #[test]
    fn quad_form_examples() {
        let f = cholesky(&SymMatrix::identity(2)).unwrap();
        assert_eq!(f.quad_form(&[3.0, 4.0]).unwrap(), 25.0);
        assert_eq!(f.quad_form(&[0.0, 0.0]).unwrap(), 0.0);
        let g = cholesky(&sym(&[&[4.0, 0.0], &[0.0, 9.0]])).unwrap();
        assert!((g.quad_form(&[2.0, 3.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(
            g.quad_form(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn regularize_examples() {
        let z = regularize(&SymMatrix::zeros(2), 1e-6);
        assert_eq!(z, SymMatrix::from_lower_fn(2, |i, j| if i == j { 1e-6 } else { 0.0 }));
        assert_eq!(regularize(&SymMatrix::identity(2), 0.0), SymMatrix::identity(2));
        assert_eq!(
            regularize(&sym(&[&[1.0, 1.0], &[1.0, 1.0]]), 0.5),
            sym(&[&[1.5, 1.0], &[1.0, 1.5]])
        );
    }

    #[test]
    fn from_rows_rejects_asymmetry() {
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.5, 1.0]]).is_err());
    }
}
