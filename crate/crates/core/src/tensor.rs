//! Dense row-major matrices and the handful of linear-algebra kernels the
//! reconstruction and quantization passes need.
//!
//! Everything is computed in `f64`; on-disk tensors are `f32` and are
//! widened on load.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Largest matrix (in elements) any kernel here will allocate.
pub const MAX_ELEMENTS: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn checked_len(rows: usize, cols: usize) -> Result<usize> {
    match rows.checked_mul(cols) {
        Some(n) if n <= MAX_ELEMENTS => Ok(n),
        _ => Err(Error::Sizing {
            rows,
            cols,
            limit: MAX_ELEMENTS,
        }),
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let len = checked_len(rows, cols)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Like [`DenseMatrix::new`] but also rejects NaN and infinities.
    pub fn new_finite(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let m = Self::new(rows, cols, data)?;
        if let Some(pos) = m.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite value at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        let len = checked_len(rows, cols)?;
        Ok(Self {
            rows,
            cols,
            data: vec![0.0; len],
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        Ok(m)
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        let mut m = Self::zeros(diag.len(), diag.len())?;
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        Ok(m)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Builds a `rows x columns.len()` matrix from column vectors.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut m = Self::zeros(rows, columns.len())?;
        for (j, c) in columns.iter().enumerate() {
            m.set_column(j, c)?;
        }
        Ok(m)
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

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols + j])
            .collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) -> Result<()> {
        if j >= self.cols || values.len() != self.rows {
            return Err(Error::Shape(format!(
                "cannot set column {j} of a {}x{} matrix from {} values",
                self.rows,
                self.cols,
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            self.data[i * self.cols + j] = v;
        }
        Ok(())
    }

    /// Copies out the column block `[start, end)`.
    pub fn column_block(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.cols {
            return Err(Error::Shape(format!(
                "column block [{start}, {end}) out of range for {} columns",
                self.cols
            )));
        }
        let width = end - start;
        let mut data = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Self::new(self.rows, width, data)
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols)?;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by a vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn sub(&self, rhs: &DenseMatrix) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(Error::Shape(format!(
                "cannot subtract {}x{} from {}x{}",
                rhs.rows, rhs.cols, self.rows, self.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Keeps only the columns listed in `order`, in that order.
    pub fn permute_columns(&self, order: &[usize]) -> Result<Self> {
        let mut out = Self::zeros(self.rows, order.len())?;
        for (dst, &src) in order.iter().enumerate() {
            if src >= self.cols {
                return Err(Error::Shape(format!("column {src} out of range")));
            }
            for i in 0..self.rows {
                out.data[i * order.len() + dst] = self.data[i * self.cols + src];
            }
        }
        Ok(out)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn frobenius_norm(a: &DenseMatrix) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `XᵀX`, symmetrized by averaging with its transpose.
pub fn gram(x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.is_empty() {
        return Err(Error::Argument("gram of an empty matrix".into()));
    }
    if !x.is_finite() {
        return Err(Error::Argument(
            "gram input contains non-finite values".into(),
        ));
    }
    let n = x.cols;
    let mut g = DenseMatrix::zeros(n, n)?;
    for r in 0..x.rows {
        let row = x.row(r);
        for (i, &xi) in row.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let g_row = &mut g.data[i * n..(i + 1) * n];
            for (gij, &xj) in g_row.iter_mut().zip(row) {
                *gij += xi * xj;
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (g.data[i * n + j] + g.data[j * n + i]);
            g.data[i * n + j] = avg;
            g.data[j * n + i] = avg;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConfig {
    /// Relative tolerance on the dominant eigenvalue.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SpectralEstimate {
    pub lambda_max: f64,
    pub iterations_used: usize,
    /// Estimated relative error of `lambda_max`.
    pub residual: f64,
    pub converged: bool,
}

impl SpectralEstimate {
    /// Turns an unconverged estimate into an error.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence {
                iterations: self.iterations_used,
                residual: self.residual,
            })
        }
    }
}

/// Dominant eigenvalue of a symmetric PSD matrix by power iteration.
///
/// Starts from the normalized all-ones vector. Convergence is judged on the
/// Rayleigh quotient: successive changes shrink geometrically, so the
/// remaining error is extrapolated from the last two changes and compared
/// against `tol`. If the start vector lies in the null space of `g` it is
/// perturbed once on its first component.
pub fn lambda_max(g: &DenseMatrix, cfg: SpectralConfig) -> Result<SpectralEstimate> {
    let n = g.rows;
    if n == 0 || g.cols != n {
        return Err(Error::Argument(format!(
            "lambda_max needs a non-empty square matrix, got {}x{}",
            g.rows, g.cols
        )));
    }
    if cfg.tol.is_nan() || cfg.tol <= 0.0 || cfg.max_iters == 0 {
        return Err(Error::Argument("tol must be > 0 and max_iters >= 1".into()));
    }
    let scale = g.max_abs();
    if !scale.is_finite() {
        return Err(Error::Argument("matrix contains non-finite values".into()));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (g[(i, j)] - g[(j, i)]).abs() > 1e-9 * scale.max(1.0) {
                return Err(Error::Argument(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if scale == 0.0 {
        return Ok(SpectralEstimate {
            lambda_max: 0.0,
            iterations_used: 0,
            residual: 0.0,
            converged: true,
        });
    }

    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut w = g.matvec(&v)?;
    if norm2(&w) == 0.0 {
        v[0] += 1e-6;
        let nv = norm2(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        w = g.matvec(&v)?;
    }

    let mut lambda = dot(&v, &w);
    let mut prev_change = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 1..=cfg.max_iters {
        let nw = norm2(&w);
        if nw == 0.0 {
            // v fell into the null space: every eigenvalue it touches is zero.
            return Ok(SpectralEstimate {
                lambda_max: 0.0,
                iterations_used: it,
                residual: 0.0,
                converged: true,
            });
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
        w = g.matvec(&v)?;
        let next = dot(&v, &w);
        let change = (next - lambda).abs();
        lambda = next;

        let floor = 8.0 * f64::EPSILON * lambda.abs();
        let err = if change <= floor {
            change
        } else if prev_change.is_finite() && prev_change > 0.0 {
            let q = change / prev_change;
            if q < 1.0 {
                change.max(change * q / (1.0 - q))
            } else {
                f64::INFINITY
            }
        } else {
            f64::INFINITY
        };
        residual = if lambda > 0.0 { err / lambda } else { err };
        if residual <= cfg.tol {
            return Ok(SpectralEstimate {
                lambda_max: lambda,
                iterations_used: it,
                residual,
                converged: true,
            });
        }
        prev_change = change;
    }
    Ok(SpectralEstimate {
        lambda_max: lambda,
        iterations_used: cfg.max_iters,
        residual,
        converged: false,
    })
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
///
/// On a non-positive pivot returns [`Error::Cholesky`] with the pivot index;
/// `damping_ratio` is only echoed into the error.
pub fn cholesky_lower(a: &DenseMatrix, damping_ratio: f64) -> Result<DenseMatrix> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::Shape(format!(
            "cholesky of non-square {}x{}",
            a.rows, a.cols
        )));
    }
    let mut l = DenseMatrix::zeros(n, n)?;
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= 0.0 || !d.is_finite() {
            return Err(Error::Cholesky {
                pivot: j,
                damping_ratio,
            });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn spd_inverse(a: &DenseMatrix, damping_ratio: f64) -> Result<DenseMatrix> {
    let l = cholesky_lower(a, damping_ratio)?;
    let n = l.rows;
    // L⁻¹ by forward substitution, column by column.
    let mut linv = DenseMatrix::zeros(n, n)?;
    for c in 0..n {
        for i in c..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                s -= l[(i, k)] * linv[(k, c)];
            }
            linv[(i, c)] = s / l[(i, i)];
        }
    }
    // A⁻¹ = L⁻ᵀ L⁻¹
    let mut inv = DenseMatrix::zeros(n, n)?;
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += linv[(k, i)] * linv[(k, j)];
            }
            inv[(i, j)] = s;
            inv[(j, i)] = s;
        }
    }
    Ok(inv)
}
