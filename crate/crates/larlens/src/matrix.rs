//! Dense row-major `f64` matrices.
//!
//! Everything downstream (SVD, spectra, the transformer) runs on this one
//! representation, so the multiply kernels here are written to autovectorize:
//! inner loops run over contiguous output rows and never reassociate sums,
//! which keeps every product bit-reproducible from run to run.

use std::fmt;

// ───────────────────────────── errors ──────────────────────────────

/// Construction or shape failure for dense matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatrixError {
    /// Rows and columns must both be positive.
    EmptyDimensions { rows: usize, cols: usize },
    /// Backing buffer length disagrees with `rows * cols`.
    DataLengthMismatch { rows: usize, cols: usize, len: usize },
    /// Operand shapes are incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
}

impl fmt::Display for MatrixError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixError::EmptyDimensions { rows, cols } => {
                write!(f, "matrix dimensions must be positive, got {rows}x{cols}")
            }
            MatrixError::DataLengthMismatch { rows, cols, len } => {
                write!(f, "buffer of length {len} cannot back a {rows}x{cols} matrix")
            }
            MatrixError::ShapeMismatch { op, left, right } => write!(
                f,
                "{op}: incompatible shapes {}x{} and {}x{}",
                left.0, left.1, right.0, right.1
            ),
        }
    }
}

impl std::error::Error for MatrixError {}

// ───────────────────────────── DenseMatrix ─────────────────────────

/// 2-D `f64` matrix, row-major, with positive row and column counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Wraps an existing row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MatrixError> {
        if rows == 0 || cols == 0 {
            return Err(MatrixError::EmptyDimensions { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(MatrixError::DataLengthMismatch { rows, cols, len: data.len() });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// All-zero matrix. Panics on zero dimensions (programmer error).
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from a function of (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DenseMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        DenseMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Row `i` as a contiguous slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// The full row-major backing slice.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Frobenius norm: `sqrt(Σ a_ij²)`.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Every element scaled by `c`.
    pub fn scaled(&self, c: f64) -> DenseMatrix {
        let data = self.data.iter().map(|v| c * v).collect();
        DenseMatrix { rows: self.rows, cols: self.cols, data }
    }

    /// `self · rhs` for `(m×k)(k×n)`.
    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix, MatrixError> {
        if self.cols != rhs.rows {
            return Err(MatrixError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        matmul_slices(&self.data, &rhs.data, self.rows, self.cols, rhs.cols, &mut out.data);
        Ok(out)
    }

    /// `self · rhsᵀ` for `(m×k)(n×k)ᵀ`, i.e. rows of `self` against rows of `rhs`.
    pub fn matmul_transpose_b(&self, rhs: &DenseMatrix) -> Result<DenseMatrix, MatrixError> {
        if self.cols != rhs.cols {
            return Err(MatrixError::ShapeMismatch {
                op: "matmul_transpose_b",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, rhs.rows);
        matmul_transb_slices(&self.data, &rhs.data, self.rows, self.cols, rhs.rows, &mut out.data);
        Ok(out)
    }
}

// ───────────────────────── slice-level kernels ─────────────────────
//
// The transformer in `grokkit` runs on raw buffers, so the kernels are
// exposed at the slice level. All three fix the reduction order per output
// element, which is what makes training runs bit-deterministic.

/// `out[m×n] = a[m×k] · b[k×n]`.
pub(crate) fn matmul_slices(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    // Four k-steps per pass over the output row: same fixed evaluation
    // order every call (determinism), four times fewer output stores.
    let k4 = k - k % 4;
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        let mut kk = 0;
        while kk < k4 {
            let a0 = a_row[kk];
            let a1 = a_row[kk + 1];
            let a2 = a_row[kk + 2];
            let a3 = a_row[kk + 3];
            let b0 = &b[kk * n..(kk + 1) * n];
            let b1 = &b[(kk + 1) * n..(kk + 2) * n];
            let b2 = &b[(kk + 2) * n..(kk + 3) * n];
            let b3 = &b[(kk + 3) * n..(kk + 4) * n];
            for j in 0..n {
                out_row[j] += (a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]);
            }
            kk += 4;
        }
        while kk < k {
            let aik = a_row[kk];
            let b_row = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                out_row[j] += aik * b_row[j];
            }
            kk += 1;
        }
    }
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`. Internally transposes `b` once so the
/// inner loop stays contiguous.
pub(crate) fn matmul_transb_slices(
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(b.len(), n * k);
    let mut bt = vec![0.0; k * n];
    transpose_slices(b, n, k, &mut bt);
    matmul_slices(a, &bt, m, k, n, out);
}

/// `out[m×n] = a[k×m]ᵀ · b[k×n]`.
pub(crate) fn matmul_transa_slices(
    a: &[f64],
    b: &[f64],
    k: usize,
    m: usize,
    n: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    let k4 = k - k % 4;
    let mut kk = 0;
    while kk < k4 {
        let a0 = &a[kk * m..(kk + 1) * m];
        let a1 = &a[(kk + 1) * m..(kk + 2) * m];
        let a2 = &a[(kk + 2) * m..(kk + 3) * m];
        let a3 = &a[(kk + 3) * m..(kk + 4) * m];
        let b0 = &b[kk * n..(kk + 1) * n];
        let b1 = &b[(kk + 1) * n..(kk + 2) * n];
        let b2 = &b[(kk + 2) * n..(kk + 3) * n];
        let b3 = &b[(kk + 3) * n..(kk + 4) * n];
        for i in 0..m {
            let (c0, c1, c2, c3) = (a0[i], a1[i], a2[i], a3[i]);
            let out_row = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                out_row[j] += (c0 * b0[j] + c1 * b1[j]) + (c2 * b2[j] + c3 * b3[j]);
            }
        }
        kk += 4;
    }
    while kk < k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for i in 0..m {
            let aki = a_row[i];
            let out_row = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                out_row[j] += aki * b_row[j];
            }
        }
        kk += 1;
    }
}

/// `out[cols×rows] = aᵀ` for row-major `a[rows×cols]`.
pub(crate) fn transpose_slices(a: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
}

/// Plain dot product with a fixed left-to-right summation order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates_shape() {
        assert!(matches!(
            DenseMatrix::from_vec(0, 3, vec![]),
            Err(MatrixError::EmptyDimensions { .. })
        ));
        assert!(matches!(
            DenseMatrix::from_vec(2, 2, vec![1.0; 3]),
            Err(MatrixError::DataLengthMismatch { .. })
        ));
        assert!(DenseMatrix::from_vec(2, 2, vec![1.0; 4]).is_ok());
    }

    #[test]
    fn matmul_small_known_product() {
        let a = DenseMatrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = DenseMatrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_error() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(MatrixError::ShapeMismatch { .. })));
    }

    #[test]
    fn transpose_round_trip() {
        let a = DenseMatrix::from_fn(3, 5, |i, j| (i * 10 + j) as f64);
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.transpose().get(4, 2), a.get(2, 4));
    }

    #[test]
    fn matmul_transpose_b_matches_explicit_transpose() {
        let a = DenseMatrix::from_fn(4, 3, |i, j| (i + j) as f64 * 0.5 + 1.0);
        let b = DenseMatrix::from_fn(5, 3, |i, j| (i as f64 - j as f64) * 0.25);
        let direct = a.matmul_transpose_b(&b).unwrap();
        let via_t = a.matmul(&b.transpose()).unwrap();
        assert_eq!(direct, via_t);
    }

    #[test]
    fn transa_kernel_matches_explicit_transpose() {
        let a = DenseMatrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let b = DenseMatrix::from_fn(6, 3, |i, j| ((i + 2 * j) % 7) as f64 * 0.5);
        let mut out = vec![0.0; 4 * 3];
        matmul_transa_slices(a.data(), b.data(), 6, 4, 3, &mut out);
        let expect = a.transpose().matmul(&b).unwrap();
        assert_eq!(&out, expect.data());
    }

    #[test]
    fn frobenius_norm_of_345_triangle() {
        let m = DenseMatrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(m.frobenius_norm(), 5.0);
    }
}
