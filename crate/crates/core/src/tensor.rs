//! Dense rank-4 tensors and matrices, plus the unfolding and mode-product
//! primitives the HOSVD is assembled from.
//!
//! Storage is row-major throughout. Element `(b, c, h, w)` of a tensor with
//! dims `[B, C, H, W]` lives at flat index `((b * C + c) * H + h) * W + w`.
//!
//! Mode indices are 1-based (`1..=4`) to match the usual Tucker notation:
//! mode 1 is batch, mode 2 channel, mode 3 height, mode 4 width. The mode-`j`
//! unfolding has one row per index of mode `j`; its columns enumerate the
//! remaining three modes in ascending mode order with the last one varying
//! fastest.

use crate::error::{argument, shape, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(argument(format!("matrix dims must be positive, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(shape(format!(
                "matrix {rows}x{cols} needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(shape("ragged rows"));
        }
        Self::new(r, c, rows.concat())
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
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

    pub fn column(&self, j: usize) -> Vec<f64> {
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

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(shape(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let lhs_row = &self.data[k * self.cols..(k + 1) * self.cols];
            let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
            for (i, &a) in lhs_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(shape(format!(
                "cannot multiply {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = dot(a, rhs.row(j));
            }
        }
        Ok(out)
    }

    /// Keeps the first `k` columns.
    pub fn leading_columns(&self, k: usize) -> Matrix {
        let k = k.min(self.cols);
        Matrix::from_fn(self.rows, k, |i, j| self.get(i, j))
    }

    pub fn frobenius_norm(&self) -> f64 {
        sum_squares(&self.data).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }
}

/// Dense `(B, C, H, W)` tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(shape(format!("tensor {dims:?} needs {n} elements, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self { dims, data: vec![0.0; dims.iter().product()] }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for b in 0..dims[0] {
            for c in 0..dims[1] {
                for h in 0..dims[2] {
                    for w in 0..dims[3] {
                        data.push(f([b, c, h, w]));
                    }
                }
            }
        }
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cc, hh, ww] = self.dims;
        ((b * cc + c) * hh + h) * ww + w
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset(b, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.offset(b, c, h, w);
        self.data[i] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        sum_squares(&self.data).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data viewed with different dims of equal volume.
    pub fn reshape(self, dims: [usize; 4]) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &Tensor4) -> f64 {
        dot(&self.data, &other.data)
    }
}

fn check_dims(dims: [usize; 4]) -> Result<()> {
    if dims.contains(&0) {
        return Err(argument(format!("tensor dims must be positive, got {dims:?}")));
    }
    Ok(())
}

fn check_mode(mode: usize) -> Result<usize> {
    if !(1..=4).contains(&mode) {
        return Err(argument(format!("mode must be in 1..=4, got {mode}")));
    }
    Ok(mode - 1)
}

/// Splits `dims` around axis `j` into `(outer, size, inner)` volumes.
fn split_at_axis(dims: [usize; 4], j: usize) -> (usize, usize, usize) {
    let outer = dims[..j].iter().product();
    let inner = dims[j + 1..].iter().product();
    (outer, dims[j], inner)
}

/// Mode-`mode` unfolding of `t` (rows indexed by that mode).
pub fn mode_unfold(t: &Tensor4, mode: usize) -> Result<Matrix> {
    let j = check_mode(mode)?;
    let (outer, m, inner) = split_at_axis(t.dims, j);
    let cols = outer * inner;
    let mut out = vec![0.0; m * cols];
    // Flat layout is [outer][m][inner]; the unfolding is [m][outer][inner].
    for o in 0..outer {
        for r in 0..m {
            let src = &t.data[(o * m + r) * inner..(o * m + r + 1) * inner];
            out[r * cols + o * inner..r * cols + (o + 1) * inner].copy_from_slice(src);
        }
    }
    Ok(Matrix { rows: m, cols, data: out })
}

/// Inverse of [`mode_unfold`].
pub fn mode_fold(m: &Matrix, mode: usize, dims: [usize; 4]) -> Result<Tensor4> {
    let j = check_mode(mode)?;
    check_dims(dims)?;
    let (outer, rows, inner) = split_at_axis(dims, j);
    if m.rows != rows || m.cols != outer * inner {
        return Err(shape(format!(
            "cannot fold {}x{} matrix into {dims:?} along mode {mode}",
            m.rows, m.cols
        )));
    }
    let cols = m.cols;
    let mut data = vec![0.0; m.data.len()];
    for o in 0..outer {
        for r in 0..rows {
            let src = &m.data[r * cols + o * inner..r * cols + (o + 1) * inner];
            data[(o * rows + r) * inner..(o * rows + r + 1) * inner].copy_from_slice(src);
        }
    }
    Ok(Tensor4 { dims, data })
}

/// Mode-`mode` product `t ×_mode m`: contracts that mode of `t` against the
/// columns of `m`, replacing its extent by `m.rows()`.
pub fn mode_product(t: &Tensor4, m: &Matrix, mode: usize) -> Result<Tensor4> {
    let j = check_mode(mode)?;
    if m.cols != t.dims[j] {
        return Err(shape(format!(
            "mode-{mode} product needs {} matrix columns, got {}",
            t.dims[j], m.cols
        )));
    }
    let (outer, k_dim, inner) = split_at_axis(t.dims, j);
    let mut dims = t.dims;
    dims[j] = m.rows;
    let mut data = vec![0.0; outer * m.rows * inner];
    for o in 0..outer {
        for r in 0..m.rows {
            let dst = &mut data[(o * m.rows + r) * inner..(o * m.rows + r + 1) * inner];
            for k in 0..k_dim {
                let coef = m.data[r * m.cols + k];
                if coef == 0.0 {
                    continue;
                }
                let src = &t.data[(o * k_dim + k) * inner..(o * k_dim + k + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += coef * s;
                }
            }
        }
    }
    Ok(Tensor4 { dims, data })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sum_squares(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "max_abs_diff on different lengths");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
