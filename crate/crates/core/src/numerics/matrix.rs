//! Dense small-matrix linear algebra: log-determinant, inverse, rank.
//!
//! Everything here targets the matrix sizes that occur in exact design work
//! (at most a few dozen rows and columns), so the factorizations favor
//! robustness over asymptotic speed: pivoted Cholesky for symmetric positive
//! definite work and pivoted Gaussian elimination for rank and inversion.

use crate::error::{Error, Result};

/// Relative pivot threshold separating genuine singularity from roundoff.
/// Coded levels in [-1, 1] keep matrix entries O(n), so this is scale-safe.
pub const SPD_PIVOT_TOL: f64 = 1e-10;

/// Default relative threshold for numerical rank.
pub const RANK_TOL: f64 = 1e-9;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty());
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols));
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        let mut m = Matrix::zeros(entries.len(), entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = out.row_mut(i);
                for j in 0..other.cols {
                    dst[j] += a * src[j];
                }
            }
        }
        out
    }

    /// `self' * self`, exploiting symmetry of the result.
    pub fn gram(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..self.cols {
                let v = row[i];
                if v == 0.0 {
                    continue;
                }
                for j in i..self.cols {
                    out[(i, j)] += v * row[j];
                }
            }
        }
        for i in 0..self.cols {
            for j in 0..i {
                out[(i, j)] = out[(j, i)];
            }
        }
        out
    }

    /// `self' * other` for matrices sharing their row count.
    pub fn cross(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "cross dimension mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for i in 0..self.cols {
                let v = a[i];
                if v == 0.0 {
                    continue;
                }
                let dst = out.row_mut(i);
                for j in 0..other.cols() {
                    dst[j] += v * b[j];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
        out
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a -= *b;
        }
        out
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= factor;
        }
        out
    }

    /// `self + shift * I` for square matrices.
    pub fn shifted(&self, shift: f64) -> Matrix {
        assert!(self.is_square());
        let mut out = self.clone();
        for i in 0..self.rows {
            out[(i, i)] += shift;
        }
        out
    }

    pub fn trace(&self) -> f64 {
        assert!(self.is_square());
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Submatrix keeping rows `r0..rows` and columns `c0..cols`.
    pub fn trailing_submatrix(&self, r0: usize, c0: usize) -> Matrix {
        assert!(r0 < self.rows && c0 < self.cols);
        Matrix::from_fn(self.rows - r0, self.cols - c0, |i, j| {
            self[(i + r0, j + c0)]
        })
    }

    /// Log determinant of a symmetric positive definite matrix via pivoted
    /// Cholesky. Errors with [`Error::NotPositiveDefinite`] when a pivot
    /// drops to the singularity threshold.
    pub fn log_det_psd(&self) -> Result<f64> {
        Ok(self.cholesky()?.log_det())
    }

    /// Pivoted Cholesky factorization `P A P' = L L'`.
    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::factor(self)
    }

    /// Inverse of a general square matrix by Gauss-Jordan elimination with
    /// partial pivoting. Errors with [`Error::Singular`] on rank deficiency.
    pub fn inverse(&self) -> Result<Matrix> {
        assert!(self.is_square(), "inverse requires a square matrix");
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Matrix::identity(n);
        let scale = self.max_abs().max(1.0);
        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_val = a[(col, col)].abs();
            for r in col + 1..n {
                let v = a[(r, col)].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = r;
                }
            }
            if pivot_val <= 1e-13 * scale {
                return Err(Error::Singular);
            }
            if pivot_row != col {
                a.swap_rows(col, pivot_row);
                inv.swap_rows(col, pivot_row);
            }
            let p = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= p;
                inv[(col, j)] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[(r, col)];
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[(r, j)] -= f * a[(col, j)];
                    inv[(r, j)] -= f * inv[(col, j)];
                }
            }
        }
        Ok(inv)
    }

    /// Numerical rank by Gaussian elimination with complete pivoting; pivots
    /// are counted while they stay above `tol` relative to the largest pivot.
    pub fn rank(&self, tol: f64) -> usize {
        let mut a = self.clone();
        let (rows, cols) = (a.rows, a.cols);
        let mut rank = 0;
        let mut first_pivot = 0.0_f64;
        for step in 0..rows.min(cols) {
            let mut best = (step, step, 0.0_f64);
            for i in step..rows {
                for j in step..cols {
                    let v = a[(i, j)].abs();
                    if v > best.2 {
                        best = (i, j, v);
                    }
                }
            }
            if step == 0 {
                first_pivot = best.2;
            }
            if best.2 <= tol * first_pivot || best.2 == 0.0 {
                break;
            }
            a.swap_rows(step, best.0);
            a.swap_cols(step, best.1);
            let p = a[(step, step)];
            for i in step + 1..rows {
                let f = a[(i, step)] / p;
                if f == 0.0 {
                    continue;
                }
                for j in step..cols {
                    a[(i, j)] -= f * a[(step, j)];
                }
            }
            rank += 1;
        }
        rank
    }

    fn swap_rows(&mut self, r1: usize, r2: usize) {
        if r1 == r2 {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(r1 * self.cols + j, r2 * self.cols + j);
        }
    }

    fn swap_cols(&mut self, c1: usize, c2: usize) {
        if c1 == c2 {
            return;
        }
        for i in 0..self.rows {
            self.data.swap(i * self.cols + c1, i * self.cols + c2);
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Pivoted Cholesky factorization of a symmetric positive definite matrix:
/// `P A P' = L L'` with `perm` mapping factor step to original index.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    /// Lower-triangular factor, row-major, in pivoted order.
    l: Matrix,
    /// `perm[step] = original index` chosen at that step.
    perm: Vec<usize>,
}

impl Cholesky {
    fn factor(a: &Matrix) -> Result<Self> {
        assert!(a.is_square(), "cholesky requires a square matrix");
        let n = a.rows();
        let mut work = a.clone();
        let mut l = Matrix::zeros(n, n);
        let mut perm: Vec<usize> = (0..n).collect();
        let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(a[(i, i)]));
        let threshold = SPD_PIVOT_TOL * max_diag.max(f64::MIN_POSITIVE);

        for step in 0..n {
            // symmetric pivot: bring the largest remaining diagonal forward
            let mut best = step;
            for i in step + 1..n {
                if work[(i, i)] > work[(best, best)] {
                    best = i;
                }
            }
            if best != step {
                work.swap_rows(step, best);
                work.swap_cols(step, best);
                l.swap_rows(step, best);
                perm.swap(step, best);
            }
            let pivot = work[(step, step)];
            if !(pivot > threshold) {
                return Err(Error::NotPositiveDefinite { step, pivot });
            }
            let root = pivot.sqrt();
            l[(step, step)] = root;
            for i in step + 1..n {
                l[(i, step)] = work[(i, step)] / root;
            }
            for i in step + 1..n {
                let li = l[(i, step)];
                if li == 0.0 {
                    continue;
                }
                for j in step + 1..=i {
                    work[(i, j)] -= li * l[(j, step)];
                    work[(j, i)] = work[(i, j)];
                }
            }
        }
        Ok(Cholesky { n, l, perm })
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// Solve `A x = b` for one right-hand side.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        // forward substitution on the permuted system
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let mut s = b[self.perm[i]];
            for j in 0..i {
                s -= self.l[(i, j)] * y[j];
            }
            y[i] = s / self.l[(i, i)];
        }
        // back substitution
        let mut xp = vec![0.0; self.n];
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for j in i + 1..self.n {
                s -= self.l[(j, i)] * xp[j];
            }
            xp[i] = s / self.l[(i, i)];
        }
        let mut x = vec![0.0; self.n];
        for i in 0..self.n {
            x[self.perm[i]] = xp[i];
        }
        x
    }

    /// Solve `A X = B` column by column.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        assert_eq!(b.rows(), self.n);
        let mut out = Matrix::zeros(self.n, b.cols());
        let mut col = vec![0.0; self.n];
        for j in 0..b.cols() {
            for i in 0..self.n {
                col[i] = b[(i, j)];
            }
            let x = self.solve_vec(&col);
            for i in 0..self.n {
                out[(i, j)] = x[i];
            }
        }
        out
    }

    pub fn inverse(&self) -> Matrix {
        self.solve(&Matrix::identity(self.n))
    }

    /// `trace(A^{-1})` without forming the full inverse.
    pub fn trace_inverse(&self) -> f64 {
        self.inverse().trace()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_det_identity_is_zero() {
        assert_relative_eq!(Matrix::identity(3).log_det_psd().unwrap(), 0.0);
    }

    #[test]
    fn log_det_diagonal() {
        let m = Matrix::diagonal(&[2.0, 3.0]);
        assert_relative_eq!(m.log_det_psd().unwrap(), 6.0_f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn log_det_two_level_factorial_information() {
        // X'X for the 2^2 full factorial with columns (1, x1, x2, x1x2) is 4*I4
        let rows = [
            [-1.0, -1.0],
            [-1.0, 1.0],
            [1.0, -1.0],
            [1.0, 1.0],
        ];
        let x = Matrix::from_fn(4, 4, |i, j| match j {
            0 => 1.0,
            1 => rows[i][0],
            2 => rows[i][1],
            _ => rows[i][0] * rows[i][1],
        });
        let m = x.gram();
        assert_relative_eq!(
            m.log_det_psd().unwrap(),
            4.0 * 4.0_f64.ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn log_det_rejects_singular() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(
            m.log_det_psd(),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn inverse_identity_and_diagonal() {
        assert_eq!(Matrix::identity(4).inverse().unwrap(), Matrix::identity(4));
        let inv = Matrix::diagonal(&[2.0, 4.0]).inverse().unwrap();
        assert_relative_eq!(inv[(0, 0)], 0.5);
        assert_relative_eq!(inv[(1, 1)], 0.25);
    }

    #[test]
    fn inverse_random_residual_small() {
        // fixed well-conditioned 5x5
        let mut m = Matrix::identity(5).scale(3.0);
        let vals = [0.7, -0.3, 0.41, 0.27, -0.9, 0.12, 0.55, -0.61, 0.08, 0.33];
        let mut it = vals.iter().cycle();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    m[(i, j)] = *it.next().unwrap();
                }
            }
        }
        let inv = m.inverse().unwrap();
        let residual = m.matmul(&inv).sub(&Matrix::identity(5)).max_abs();
        assert!(residual < 1e-9, "residual {residual}");
    }

    #[test]
    fn inverse_rejects_singular() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(m.inverse(), Err(Error::Singular)));
    }

    #[test]
    fn rank_edge_cases() {
        assert_eq!(Matrix::zeros(3, 3).rank(RANK_TOL), 0);
        assert_eq!(Matrix::identity(5).rank(RANK_TOL), 5);
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0], vec![0.0, 1.0, 1.0]]);
        assert_eq!(m.rank(RANK_TOL), 2);
    }

    #[test]
    fn cholesky_solve_matches_inverse() {
        let m = Matrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -0.2],
            vec![0.5, -0.2, 2.0],
        ]);
        let chol = m.cholesky().unwrap();
        let inv = chol.inverse();
        let residual = m.matmul(&inv).sub(&Matrix::identity(3)).max_abs();
        assert!(residual < 1e-12);
        assert_relative_eq!(
            chol.log_det(),
            m.inverse().unwrap().log_det_psd().map(|v| -v).unwrap(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn spd_logdet_inverse_det_product_is_one() {
        let m = Matrix::from_rows(&[vec![5.0, 2.0], vec![2.0, 3.0]]);
        let ld = m.log_det_psd().unwrap();
        let ld_inv = m.inverse().unwrap().log_det_psd().unwrap();
        assert_relative_eq!((ld + ld_inv).exp(), 1.0, max_relative = 1e-8);
    }

    #[test]
    fn rank_invariant_under_row_permutation_and_scaling() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 1.0], vec![1.0, 3.0, 4.0]]);
        let permuted = Matrix::from_rows(&[
            vec![0.0, 1.0, 1.0],
            vec![-5.0, -15.0, -20.0],
            vec![2.0, 4.0, 6.0],
        ]);
        assert_eq!(m.rank(RANK_TOL), permuted.rank(RANK_TOL));
    }
}
