use crate::error::{Error, Result};

use super::Real;

/// Dense row-major matrix.
///
/// Every public operation keeps entries finite when its inputs are finite;
/// constructors that accept external data reject NaN and infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("from_vec", (rows, cols), (data.len(), 1)));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(
                "matrix data contains non-finite values".into(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape("from_rows", (i, r.len()), (0, cols)));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Converts every entry through `f64`.
    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with("hadamard", other, |a, b| a * b)
    }

    fn zip_with(&self, op: &'static str, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Adds `row` (length `cols`) to every row.
    pub fn add_row_broadcast(&self, row: &[T]) -> Result<Self> {
        if row.len() != self.cols {
            return Err(Error::shape(
                "add_row_broadcast",
                self.shape(),
                (1, row.len()),
            ));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for (v, &b) in out.row_mut(i).iter_mut().zip(row) {
                *v = *v + b;
            }
        }
        Ok(out)
    }

    /// Multiplies every row elementwise by `row`.
    pub fn mul_row_broadcast(&self, row: &[T]) -> Result<Self> {
        if row.len() != self.cols {
            return Err(Error::shape(
                "mul_row_broadcast",
                self.shape(),
                (1, row.len()),
            ));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for (v, &g) in out.row_mut(i).iter_mut().zip(row) {
                *v = *v * g;
            }
        }
        Ok(out)
    }

    /// Columns `start..start + len`.
    pub fn col_slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.cols {
            return Err(Error::shape("col_slice", self.shape(), (start, len)));
        }
        Ok(Self::from_fn(self.rows, len, |i, j| self.get(i, start + j)))
    }

    /// Rows `start..start + len`.
    pub fn row_slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.rows {
            return Err(Error::shape("row_slice", self.shape(), (start, len)));
        }
        Ok(Self {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        })
    }

    /// Stacks matrices on top of each other.
    pub fn vstack(parts: &[&Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(Error::shape("vstack", (rows, cols), m.shape()));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Self { rows, cols, data })
    }

    /// Places matrices side by side.
    pub fn hstack(parts: &[&Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if let Some(m) = parts.iter().find(|m| m.rows != rows) {
            return Err(Error::shape("hstack", (rows, 0), m.shape()));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(i));
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            if i >= self.rows {
                return Err(Error::OutOfRange(format!("row {i} of {}", self.rows)));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Standard matrix product `a · b`.
///
/// Summation runs over `k` in increasing order for each output entry, so
/// results are bit-reproducible.
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (n, m, p) = (a.rows, a.cols, b.cols);
    let mut out = vec![T::zero(); n * p];
    for i in 0..n {
        let arow = a.row(i);
        let orow = &mut out[i * p..(i + 1) * p];
        for (k, &aik) in arow.iter().enumerate().take(m) {
            let brow = b.row(k);
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o = *o + aik * bkj;
            }
        }
    }
    Ok(Matrix {
        rows: n,
        cols: p,
        data: out,
    })
}

/// `a · bᵀ`, used for query-key and similarity products.
pub fn matmul_transposed<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(Error::shape("matmul_transposed", a.shape(), b.shape()));
    }
    Ok(Matrix::from_fn(a.rows, b.rows, |i, j| {
        a.row(i)
            .iter()
            .zip(b.row(j))
            .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
    }))
}

/// Row-wise softmax of `scale · m`, shifted by each row's maximum.
pub fn row_softmax<T: Real>(m: &Matrix<T>, scale: T) -> Matrix<T> {
    let mut out = m.clone();
    for i in 0..m.rows {
        let row = out.row_mut(i);
        let max = row
            .iter()
            .fold(T::neg_infinity(), |acc, &v| acc.max(v * scale));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v * scale - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Default epsilon for [`layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Normalizes each row to zero mean and unit variance (population variance,
/// `eps` added to the variance). No affine parameters.
pub fn layer_norm<T: Real>(m: &Matrix<T>, eps: T) -> Result<Matrix<T>> {
    if m.cols < 2 {
        return Err(Error::Invalid(format!(
            "layer_norm needs at least 2 columns, got {}",
            m.cols
        )));
    }
    let d = T::from_usize_exact(m.cols);
    let mut out = m.clone();
    for i in 0..m.rows {
        let row = out.row_mut(i);
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / d;
        let var = row
            .iter()
            .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
            / d;
        let inv = T::one() / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    Ok(out)
}

/// `sqrt(2/π)` in the tanh approximation of GELU.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient in the tanh approximation of GELU.
pub const GELU_CUBIC: f64 = 0.044_715;

/// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub fn gelu_scalar<T: Real>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let c = T::from_f64_lossy(GELU_SQRT_2_OVER_PI);
    let k = T::from_f64_lossy(GELU_CUBIC);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

pub fn gelu<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    m.map(gelu_scalar)
}

/// `x · sigmoid(x)`, applied to the conditioning vector before modulation.
pub fn silu<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    m.map(|x| x / (T::one() + (-x).exp()))
}
