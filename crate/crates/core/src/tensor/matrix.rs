use std::fmt;

use crate::error::{precondition, shape_err, Result};

/// Dense `rows x cols` matrix of `f64`, stored row-major:
/// entry `(i, j)` lives at `data[i * cols + j]`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Selects the matmul loop nest. Both produce identical MAdd counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatmulKernel {
    #[default]
    Naive,
    Blocked,
}

const BLOCK: usize = 64;

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return shape_err("Matrix::new", format!("empty shape {rows}x{cols}"));
        }
        if data.len() != rows * cols {
            return shape_err(
                "Matrix::new",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            );
        }
        Ok(Self { rows, cols, data })
    }

    /// # Panics
    /// Panics on an empty shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.data.fill(value);
        m
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return shape_err("Matrix::from_rows", "no rows");
        };
        let cols = first.len();
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("Matrix::from_rows", "ragged rows");
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Columns `start..end` as a new matrix.
    pub fn col_block(&self, start: usize, end: usize) -> Result<Matrix> {
        if start >= end || end > self.cols {
            return shape_err(
                "Matrix::col_block",
                format!("range {start}..{end} for {} columns", self.cols),
            );
        }
        Ok(Matrix::from_fn(self.rows, end - start, |i, j| {
            self.get(i, start + j)
        }))
    }

    /// Horizontal concatenation `[self, other]`.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return shape_err(
                "Matrix::hcat",
                format!("{} rows vs {} rows", self.rows, other.rows),
            );
        }
        let cols = self.cols + other.cols;
        Ok(Matrix::from_fn(self.rows, cols, |i, j| {
            if j < self.cols {
                self.get(i, j)
            } else {
                other.get(i, j - self.cols)
            }
        }))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return shape_err(
                "Matrix::add",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            );
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        self.matmul_with(other, MatmulKernel::Naive)
    }

    pub fn matmul_with(&self, other: &Matrix, kernel: MatmulKernel) -> Result<Matrix> {
        if self.cols != other.rows {
            return shape_err(
                "matmul",
                format!(
                    "({}x{}) * ({}x{})",
                    self.rows, self.cols, other.rows, other.cols
                ),
            );
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        match kernel {
            MatmulKernel::Naive => matmul_naive(self, other, &mut out),
            MatmulKernel::Blocked => matmul_blocked(self, other, &mut out),
        }
        Ok(out)
    }

    /// `selfᵀ * other` without materializing the transpose of `self`
    /// in the caller.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return shape_err(
                "t_matmul",
                format!(
                    "({}x{})ᵀ * ({}x{})",
                    self.rows, self.cols, other.rows, other.cols
                ),
            );
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        let n = other.cols;
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in o.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return shape_err(
                "matmul_t",
                format!(
                    "({}x{}) * ({}x{})ᵀ",
                    self.rows, self.cols, other.rows, other.cols
                ),
            );
        }
        Ok(Matrix::from_fn(self.rows, other.rows, |i, j| {
            self.row(i)
                .iter()
                .zip(other.row(j))
                .map(|(a, b)| a * b)
                .sum()
        }))
    }

    pub fn trace(&self) -> Result<f64> {
        if self.rows != self.cols {
            return precondition("trace", format!("{}x{} is not square", self.rows, self.cols));
        }
        Ok((0..self.rows).map(|i| self.get(i, i)).sum())
    }

    /// Column-wise softmax; every column of the result is a probability
    /// vector. Each column is shifted by its maximum before exponentiation.
    pub fn softmax_columns(&self) -> Matrix {
        let mut out = self.clone();
        let (rows, cols) = self.shape();
        let mut col_max = vec![f64::NEG_INFINITY; cols];
        for i in 0..rows {
            for (m, &v) in col_max.iter_mut().zip(self.row(i)) {
                *m = m.max(v);
            }
        }
        let mut col_sum = vec![0.0; cols];
        for i in 0..rows {
            let row = &mut out.data[i * cols..(i + 1) * cols];
            for ((v, m), s) in row.iter_mut().zip(&col_max).zip(col_sum.iter_mut()) {
                *v = (*v - m).exp();
                *s += *v;
            }
        }
        for i in 0..rows {
            let row = &mut out.data[i * cols..(i + 1) * cols];
            for (v, s) in row.iter_mut().zip(&col_sum) {
                *v /= s;
            }
        }
        out
    }
}

fn matmul_naive(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let n = b.cols;
    for i in 0..a.rows {
        let o = &mut out.data[i * n..(i + 1) * n];
        for (k, &aik) in a.row(i).iter().enumerate() {
            for (o, &bkj) in o.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
}

fn matmul_blocked(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let (m, kdim, n) = (a.rows, a.cols, b.cols);
    for i0 in (0..m).step_by(BLOCK) {
        let i1 = (i0 + BLOCK).min(m);
        for k0 in (0..kdim).step_by(BLOCK) {
            let k1 = (k0 + BLOCK).min(kdim);
            for j0 in (0..n).step_by(BLOCK) {
                let j1 = (j0 + BLOCK).min(n);
                for i in i0..i1 {
                    for k in k0..k1 {
                        let aik = a.data[i * kdim + k];
                        let brow = &b.data[k * n + j0..k * n + j1];
                        let orow = &mut out.data[i * n + j0..i * n + j1];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += aik * bv;
                        }
                    }
                }
            }
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn identity_matmul() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 3.5);
        assert_eq!(Matrix::identity(3).matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::zeros(2, 3);
        assert!(a.matmul(&a).is_err());
        assert!(a.t_matmul(&Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn kernels_and_transposed_products_agree() {
        let a = Matrix::from_fn(70, 90, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let b = Matrix::from_fn(90, 65, |i, j| ((i * 5 + j) % 13) as f64 * 0.25);
        let naive = a.matmul(&b).unwrap();
        let blocked = a.matmul_with(&b, MatmulKernel::Blocked).unwrap();
        assert!(naive.max_abs_diff(&blocked) < 1e-9);
        let tn = a.transpose().t_matmul(&b).unwrap();
        assert!(naive.max_abs_diff(&tn) < 1e-9);
        let nt = a.matmul_t(&b.transpose()).unwrap();
        assert!(naive.max_abs_diff(&nt) < 1e-9);
    }

    #[test]
    fn softmax_of_zero_column_is_uniform() {
        let s = Matrix::zeros(2, 1).softmax_columns();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = m(&[&[1.0, -2.0], &[3.0, 0.5], &[0.0, 4.0]]);
        let mut shifted = a.clone();
        for i in 0..3 {
            shifted.set(i, 0, a.get(i, 0) + 17.0);
            shifted.set(i, 1, a.get(i, 1) - 3.0);
        }
        assert!(a.softmax_columns().max_abs_diff(&shifted.softmax_columns()) < 1e-14);
    }

    #[test]
    fn softmax_large_magnitudes_are_finite() {
        let a = m(&[&[1e3, -1e3], &[-1e3, 1e3], &[999.0, 0.0]]);
        let s = a.softmax_columns();
        assert!(s.data().iter().all(|v| v.is_finite()));
        for j in 0..2 {
            let total: f64 = s.col(j).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_requires_square() {
        assert!(Matrix::zeros(2, 3).trace().is_err());
        assert_eq!(Matrix::from_diag(&[1.0, 2.0, 3.0]).trace().unwrap(), 6.0);
    }

    #[test]
    fn hcat_and_col_block_invert() {
        let a = Matrix::from_fn(2, 3, |i, j| (i + 10 * j) as f64);
        let b = Matrix::from_fn(2, 2, |i, j| -((i + j) as f64));
        let c = a.hcat(&b).unwrap();
        assert_eq!(c.col_block(0, 3).unwrap(), a);
        assert_eq!(c.col_block(3, 5).unwrap(), b);
        assert!(c.col_block(3, 6).is_err());
    }
}
