//! Dense row-major `f64` matrix.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::{Index, IndexMut};

use super::LinalgError;

/// Dense real matrix stored row-major.
///
/// A matrix may have zero columns (an empty basis), but every constructor
/// that takes data checks `data.len() == rows * cols`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Shape(format!("data length {} does not match {rows}x{cols}", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::Shape("ragged rows".into()));
        }
        Ok(Self { rows: r, cols: c, data: rows.concat() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[f64]) {
        debug_assert_eq!(v.len(), self.rows);
        for (i, &x) in v.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::shape_mismatch("matmul", self.shape(), rhs.shape()));
        }
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let out_row = &mut out.data[i * m..(i + 1) * m];
            let lhs_row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in lhs_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ * rhs` without materializing the transpose.
    pub fn tr_matmul(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        if self.rows != rhs.rows {
            return Err(LinalgError::shape_mismatch("tr_matmul", self.shape(), rhs.shape()));
        }
        let (n, k, m) = (self.cols, self.rows, rhs.cols);
        let mut out = Matrix::zeros(n, m);
        for p in 0..k {
            let lhs_row = &self.data[p * n..(p + 1) * n];
            let rhs_row = &rhs.data[p * m..(p + 1) * m];
            for (i, &a) in lhs_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * m..(i + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * rhsᵀ`.
    pub fn matmul_tr(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != rhs.cols {
            return Err(LinalgError::shape_mismatch("matmul_tr", self.shape(), rhs.shape()));
        }
        let (n, k, m) = (self.rows, self.cols, rhs.rows);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b = &rhs.data[j * k..(j + 1) * k];
                out.data[i * m + j] = dot(a, b);
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, LinalgError> {
        if self.shape() != rhs.shape() {
            return Err(LinalgError::shape_mismatch(op, self.shape(), rhs.shape()));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// `self += alpha * rhs`.
    pub fn axpy(&mut self, alpha: f64, rhs: &Matrix) -> Result<(), LinalgError> {
        if self.shape() != rhs.shape() {
            return Err(LinalgError::shape_mismatch("axpy", self.shape(), rhs.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Largest absolute entry (`‖·‖_max`).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    /// Matrix 1-norm: maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Contiguous block `[r0, r0+nr) x [c0, c0+nc)`.
    pub fn submatrix(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Matrix {
        assert!(r0 + nr <= self.rows && c0 + nc <= self.cols, "submatrix out of range");
        Matrix::from_fn(nr, nc, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn columns(&self, range: std::ops::Range<usize>) -> Matrix {
        self.submatrix(0, range.start, self.rows, range.len())
    }

    pub fn rows_range(&self, range: std::ops::Range<usize>) -> Matrix {
        let data = self.data[range.start * self.cols..range.end * self.cols].to_vec();
        Matrix { rows: range.len(), cols: self.cols, data }
    }

    /// Select columns by index.
    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, idx.len(), |i, j| self[(i, idx[j])])
    }

    pub fn hstack(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        if self.rows != rhs.rows {
            return Err(LinalgError::shape_mismatch("hstack", self.shape(), rhs.shape()));
        }
        let cols = self.cols + rhs.cols;
        Ok(Matrix::from_fn(self.rows, cols, |i, j| if j < self.cols { self[(i, j)] } else { rhs[(i, j - self.cols)] }))
    }

    pub fn vstack(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != rhs.cols {
            return Err(LinalgError::shape_mismatch("vstack", self.shape(), rhs.shape()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&rhs.data);
        Ok(Matrix { rows: self.rows + rhs.rows, cols: self.cols, data })
    }

    /// Largest entrywise difference to `other`; shapes must agree.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Writes the plain-text format: a `rows cols` header then one line per
    /// row, each value with 17 significant digits.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|x| format!("{x:.16e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Matrix, LinalgError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| LinalgError::Parse("missing header".into()))?
            .map_err(|e| LinalgError::Parse(e.to_string()))?;
        let mut dims = header.split_whitespace().map(str::parse::<usize>);
        let (rows, cols) = match (dims.next(), dims.next(), dims.next()) {
            (Some(Ok(r)), Some(Ok(c)), None) => (r, c),
            _ => return Err(LinalgError::Parse(format!("bad header `{header}`"))),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| LinalgError::Parse(format!("missing row {i}")))?
                .map_err(|e| LinalgError::Parse(e.to_string()))?;
            let before = data.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| LinalgError::Parse(format!("bad value `{tok}`")))?;
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(LinalgError::Parse(format!("row {i} has wrong length")));
            }
        }
        Matrix::from_vec(rows, cols, data)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let shown: Vec<String> = self.row(i).iter().take(8).map(|x| format!("{x:>10.4e}")).collect();
            writeln!(f, "  {}{}", shown.join(" "), if self.cols > 8 { " ..." } else { "" })?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}
