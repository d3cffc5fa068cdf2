//! From-scratch dense decompositions.
//!
//! Three routines, all in plain `f64`:
//!
//! - Householder QR (used to precondition tall matrices before the SVD and
//!   to rebuild the left singular vectors),
//! - a one-sided Jacobi SVD: cyclic plane rotations orthogonalize the
//!   columns of the working matrix while the same rotations accumulate into
//!   a full square right basis `V`. Because `V` starts as the identity and
//!   only ever gets rotated, its trailing columns are an exact orthonormal
//!   completion of the row space — the null-space directions come for free,
//!   which is exactly what the activation spectrum needs,
//! - a classic two-sided Jacobi eigensolver (values only) for symmetric
//!   matrices, used for the 95%-variance rank and as an independent oracle
//!   against the SVD in tests.
//!
//! One-sided Jacobi trades speed for accuracy and simplicity: singular
//! values come out with high relative accuracy and every step is an exact
//! orthogonal transform, so `VᵀV = I` holds to machine precision by
//! construction. Work is cyclic sweeps over all column pairs; convergence is
//! declared when a full sweep applies no rotation.

use crate::matrix::{dot, DenseMatrix};
use std::fmt;

/// Hard cap on Jacobi sweeps. Random matrices converge in well under 20
/// sweeps; hitting this cap means something is genuinely wrong with the
/// input (NaNs, absurd scales) and is reported as an error, not a panic.
pub(crate) const MAX_SWEEPS: usize = 64;

/// Relative off-diagonal threshold below which a column pair counts as
/// already orthogonal.
const JACOBI_TOL: f64 = 1.0e-15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum LinalgError {
    /// The iteration cap was reached before a clean sweep.
    NonConvergence { sweeps: usize },
    /// A zero matrix has no singular directions to report.
    ZeroMatrix,
}

impl fmt::Display for LinalgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinalgError::NonConvergence { sweeps } => {
                write!(f, "Jacobi iteration did not converge within {sweeps} sweeps")
            }
            LinalgError::ZeroMatrix => write!(f, "matrix is identically zero"),
        }
    }
}

impl std::error::Error for LinalgError {}

/// Raw SVD output: `w = u · diag(s) · vᵀ` restricted to the numerical rank.
pub(crate) struct RawSvd {
    /// `m×r`, orthonormal columns.
    pub u: DenseMatrix,
    /// Descending, length `r`, all strictly positive.
    pub s: Vec<f64>,
    /// `n×n`, orthonormal; column `i < r` is the `i`-th right singular
    /// direction, the remaining columns complete the basis.
    pub v: DenseMatrix,
    pub rank: usize,
}

// ─────────────────────── column-major scratch type ──────────────────────

/// Column-major working buffer: Jacobi and QR operate on whole columns, so
/// contiguous columns keep the inner loops vectorizable.
struct ColMat {
    rows: usize,
    cols: usize,
    d: Vec<f64>,
}

impl ColMat {
    fn zeros(rows: usize, cols: usize) -> Self {
        ColMat { rows, cols, d: vec![0.0; rows * cols] }
    }

    fn identity(n: usize) -> Self {
        let mut m = ColMat::zeros(n, n);
        for i in 0..n {
            m.d[i * n + i] = 1.0;
        }
        m
    }

    fn from_row_major(a: &DenseMatrix) -> Self {
        let (rows, cols) = a.shape();
        let mut m = ColMat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.d[j * rows + i] = a.get(i, j);
            }
        }
        m
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.d[j * self.rows..(j + 1) * self.rows]
    }

    fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.d[j * self.rows..(j + 1) * self.rows]
    }

    /// Disjoint mutable views of columns `i < j`.
    fn col_pair_mut(&mut self, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
        debug_assert!(i < j);
        let rows = self.rows;
        let (head, tail) = self.d.split_at_mut(j * rows);
        (&mut head[i * rows..(i + 1) * rows], &mut tail[..rows])
    }

    fn to_row_major(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.rows, self.cols, |i, j| self.d[j * self.rows + i])
    }

    /// Keeps the first `keep` columns, converted to row-major.
    fn leading_cols_row_major(&self, keep: usize) -> DenseMatrix {
        DenseMatrix::from_fn(self.rows, keep, |i, j| self.d[j * self.rows + i])
    }
}

#[inline]
fn rotate_pair(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for i in 0..x.len() {
        let xi = x[i];
        let yi = y[i];
        x[i] = c * xi - s * yi;
        y[i] = s * xi + c * yi;
    }
}

// ───────────────────────── one-sided Jacobi core ────────────────────────

/// Orthogonalizes the columns of `a` in place by plane rotations, mirroring
/// every rotation into `v`. Returns the number of sweeps used.
fn jacobi_orthogonalize(a: &mut ColMat, v: &mut ColMat) -> Result<usize, LinalgError> {
    let c = a.cols;
    for sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..c.saturating_sub(1) {
            for j in (i + 1)..c {
                let (ci, cj) = a.col_pair_mut(i, j);
                let alpha = dot(ci, ci);
                let beta = dot(cj, cj);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(ci, cj);
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // Rotation angle that zeroes the (i, j) entry of the Gram
                // matrix; hypot keeps the t computation overflow-safe.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let cr = 1.0 / t.hypot(1.0);
                let sr = cr * t;
                rotate_pair(ci, cj, cr, sr);
                let (vi, vj) = v.col_pair_mut(i, j);
                rotate_pair(vi, vj, cr, sr);
            }
        }
        if !rotated {
            return Ok(sweep);
        }
    }
    Err(LinalgError::NonConvergence { sweeps: MAX_SWEEPS })
}

/// Sorts columns of `a` (and `v`) by descending column norm, ties kept in
/// original order. Returns the norms in sorted order.
fn sort_by_column_norm(a: &mut ColMat, v: &mut ColMat) -> Vec<f64> {
    let c = a.cols;
    let norms: Vec<f64> = (0..c).map(|j| dot(a.col(j), a.col(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap().then(x.cmp(&y)));

    let permute = |m: &ColMat| {
        let mut out = ColMat::zeros(m.rows, m.cols);
        for (dst, &src) in order.iter().enumerate() {
            out.col_mut(dst).copy_from_slice(m.col(src));
        }
        out
    };
    *a = permute(a);
    *v = permute(v);
    order.iter().map(|&src| norms[src]).collect()
}

// ───────────────────────────── Householder QR ───────────────────────────

struct Reflector {
    /// Householder vector for column `col`, length `rows - col`.
    v: Vec<f64>,
    /// `2 / (vᵀv)`; zero means "no reflection for this column".
    beta: f64,
    col: usize,
}

/// In-place QR of a tall `ColMat` (`rows >= cols`). On return the upper
/// triangle of `a` holds `R`; the returned reflectors reproduce `Q`.
fn householder_qr(a: &mut ColMat) -> Vec<Reflector> {
    let (m, n) = (a.rows, a.cols);
    debug_assert!(m >= n);
    let mut reflectors = Vec::with_capacity(n);
    for j in 0..n {
        let x = &a.col(j)[j..];
        let sigma2 = dot(x, x);
        if sigma2 == 0.0 {
            reflectors.push(Reflector { v: Vec::new(), beta: 0.0, col: j });
            continue;
        }
        let norm = sigma2.sqrt();
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let beta = 2.0 / dot(&v, &v);

        // Apply H = I − β v vᵀ to the remaining columns.
        for k in (j + 1)..n {
            let ck = &mut a.col_mut(k)[j..];
            let w = beta * dot(&v, ck);
            for (cv, vv) in ck.iter_mut().zip(v.iter()) {
                *cv -= w * vv;
            }
        }
        // Column j becomes α e₁ exactly.
        let cj = &mut a.col_mut(j)[j..];
        cj.fill(0.0);
        cj[0] = alpha;
        reflectors.push(Reflector { v, beta, col: j });
    }
    reflectors
}

/// Applies `Q` (from the stored reflectors) to `b` in place: `b ← Q·b`.
fn apply_q(reflectors: &[Reflector], b: &mut ColMat) {
    for r in reflectors.iter().rev() {
        if r.beta == 0.0 {
            continue;
        }
        for k in 0..b.cols {
            let ck = &mut b.col_mut(k)[r.col..];
            let w = r.beta * dot(&r.v, ck);
            for (cv, vv) in ck.iter_mut().zip(r.v.iter()) {
                *cv -= w * vv;
            }
        }
    }
}

// ────────────────────────────── full SVD ────────────────────────────────

/// Rank cutoff: keep `s_i > max(m, n) · 2⁻⁵² · s₁`.
fn numerical_rank(s: &[f64], m: usize, n: usize) -> usize {
    if s.is_empty() || s[0] == 0.0 {
        return 0;
    }
    let thresh = m.max(n) as f64 * f64::EPSILON * s[0];
    s.iter().take_while(|&&x| x > thresh).count()
}

/// Full SVD with an `n×n` right basis. Tall inputs are QR-preconditioned so
/// the Jacobi stage always runs on a square-or-wide working matrix.
pub(crate) fn svd_full(w: &DenseMatrix) -> Result<RawSvd, LinalgError> {
    let (m, n) = w.shape();
    if m >= n {
        // W = Q·R, then Jacobi on R (n×n): W = (Q·U_R)·S·Vᵀ.
        let mut a = ColMat::from_row_major(w);
        let reflectors = householder_qr(&mut a);
        let mut r = ColMat::zeros(n, n);
        for j in 0..n {
            let src = a.col(j);
            r.col_mut(j)[..=j].copy_from_slice(&src[..=j]);
        }
        let mut v = ColMat::identity(n);
        jacobi_orthogonalize(&mut r, &mut v)?;
        let norms = sort_by_column_norm(&mut r, &mut v);
        let rank = numerical_rank(&norms, m, n);
        if rank == 0 {
            return Err(LinalgError::ZeroMatrix);
        }
        // Left vectors: normalized rotated columns, pushed back through Q.
        let mut u = ColMat::zeros(m, rank);
        for j in 0..rank {
            let inv = 1.0 / norms[j];
            let src = r.col(j);
            let dst = u.col_mut(j);
            for i in 0..n {
                dst[i] = src[i] * inv;
            }
        }
        apply_q(&reflectors, &mut u);
        Ok(RawSvd {
            u: u.to_row_major(),
            s: norms[..rank].to_vec(),
            v: v.to_row_major(),
            rank,
        })
    } else {
        // Wide matrix: orthogonalize the n columns of W directly. V is
        // accumulated as a full n×n basis; at most m norms are nonzero.
        let mut a = ColMat::from_row_major(w);
        let mut v = ColMat::identity(n);
        jacobi_orthogonalize(&mut a, &mut v)?;
        let norms = sort_by_column_norm(&mut a, &mut v);
        let rank = numerical_rank(&norms, m, n);
        if rank == 0 {
            return Err(LinalgError::ZeroMatrix);
        }
        let mut u = ColMat::zeros(m, rank);
        for j in 0..rank {
            let inv = 1.0 / norms[j];
            let src = a.col(j);
            let dst = u.col_mut(j);
            for i in 0..m {
                dst[i] = src[i] * inv;
            }
        }
        Ok(RawSvd {
            u: u.leading_cols_row_major(rank),
            s: norms[..rank].to_vec(),
            v: v.to_row_major(),
            rank,
        })
    }
}

// ─────────────────────── symmetric Jacobi eigenvalues ───────────────────

/// Eigenvalues of a symmetric matrix, descending. Values only — used where
/// eigenvectors are not needed (variance shares) and as an SVD cross-check.
pub(crate) fn sym_eigenvalues_desc(g: &DenseMatrix) -> Result<Vec<f64>, LinalgError> {
    let n = g.rows();
    debug_assert_eq!(n, g.cols());
    let mut a: Vec<f64> = g.data().to_vec();
    let idx = |i: usize, j: usize| i * n + j;

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[idx(p, q)];
                let app = a[idx(p, p)];
                let aqq = a[idx(q, q)];
                if apq == 0.0 || apq.abs() <= JACOBI_TOL * (app.abs() + aqq.abs()) {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;

                a[idx(p, p)] = app - t * apq;
                a[idx(q, q)] = aqq + t * apq;
                a[idx(p, q)] = 0.0;
                a[idx(q, p)] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[idx(r, p)];
                    let arq = a[idx(r, q)];
                    let new_p = c * arp - s * arq;
                    let new_q = s * arp + c * arq;
                    a[idx(r, p)] = new_p;
                    a[idx(p, r)] = new_p;
                    a[idx(r, q)] = new_q;
                    a[idx(q, r)] = new_q;
                }
            }
        }
        if !rotated {
            let mut eig: Vec<f64> = (0..n).map(|i| a[idx(i, i)]).collect();
            eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
            return Ok(eig);
        }
    }
    Err(LinalgError::NonConvergence { sweeps: MAX_SWEEPS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn max_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
    }

    fn orthonormality_defect(m: &DenseMatrix) -> f64 {
        // ‖MᵀM − I‖_max over columns of M.
        let g = m.transpose().matmul(m).unwrap();
        let mut worst = 0.0_f64;
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - want).abs());
            }
        }
        worst
    }

    fn reconstruct(svd: &RawSvd) -> DenseMatrix {
        // u · diag(s) · (first r columns of v)ᵀ
        let r = svd.rank;
        let us = DenseMatrix::from_fn(svd.u.rows(), r, |i, j| svd.u.get(i, j) * svd.s[j]);
        let vr = DenseMatrix::from_fn(svd.v.rows(), r, |i, j| svd.v.get(i, j));
        us.matmul(&vr.transpose()).unwrap()
    }

    #[test]
    fn svd_of_diagonal_is_exact() {
        let w = DenseMatrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, 4.0]).unwrap();
        let svd = svd_full(&w).unwrap();
        assert_eq!(svd.rank, 2);
        assert_eq!(svd.s, vec![4.0, 3.0]);
        let rec = reconstruct(&svd);
        assert!(max_abs_diff(&rec, &w) < 1e-14);
    }

    #[test]
    fn svd_tall_random_reconstructs_and_is_orthonormal() {
        let w = random_matrix(50, 30, 7);
        let svd = svd_full(&w).unwrap();
        assert_eq!(svd.rank, 30);
        assert!(orthonormality_defect(&svd.u) < 1e-12, "UᵀU far from I");
        assert!(orthonormality_defect(&svd.v) < 1e-12, "VᵀV far from I");
        let rec = reconstruct(&svd);
        assert!(
            max_abs_diff(&rec, &w) < 1e-12 * w.frobenius_norm(),
            "reconstruction residual too large"
        );
        for k in 1..svd.s.len() {
            assert!(svd.s[k - 1] >= svd.s[k], "singular values must descend");
        }
    }

    #[test]
    fn svd_wide_random_keeps_full_right_basis() {
        let w = random_matrix(30, 50, 11);
        let svd = svd_full(&w).unwrap();
        assert_eq!(svd.rank, 30);
        assert_eq!(svd.v.shape(), (50, 50), "right basis must be square");
        assert!(orthonormality_defect(&svd.v) < 1e-12);
        let rec = reconstruct(&svd);
        assert!(max_abs_diff(&rec, &w) < 1e-12 * w.frobenius_norm());
    }

    #[test]
    fn svd_rank_one_outer_product() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [2.0, 1.0, -1.0];
        let w = DenseMatrix::from_fn(4, 3, |i, j| u[i] * v[j]);
        let svd = svd_full(&w).unwrap();
        assert_eq!(svd.rank, 1);
        let unorm: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let vnorm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((svd.s[0] - unorm * vnorm).abs() < 1e-12);
    }

    #[test]
    fn svd_of_zero_matrix_is_an_error() {
        let w = DenseMatrix::zeros(3, 4);
        assert!(matches!(svd_full(&w), Err(LinalgError::ZeroMatrix)));
    }

    #[test]
    fn svd_single_column_and_single_row() {
        let col = DenseMatrix::from_vec(3, 1, vec![3.0, 0.0, 4.0]).unwrap();
        let svd = svd_full(&col).unwrap();
        assert_eq!(svd.rank, 1);
        assert!((svd.s[0] - 5.0).abs() < 1e-12);
        assert_eq!(svd.v.get(0, 0).abs(), 1.0);

        let row = DenseMatrix::from_vec(1, 3, vec![3.0, 0.0, 4.0]).unwrap();
        let svd = svd_full(&row).unwrap();
        assert_eq!(svd.rank, 1);
        assert!((svd.s[0] - 5.0).abs() < 1e-12);
        assert_eq!(svd.v.shape(), (3, 3));
        assert!(orthonormality_defect(&svd.v) < 1e-14);
    }

    #[test]
    fn squared_singulars_match_gram_eigenvalues() {
        // Independent route: eigenvalues of WᵀW from the symmetric solver
        // must equal the squared singular values from the one-sided SVD.
        let w = random_matrix(24, 16, 3);
        let svd = svd_full(&w).unwrap();
        let gram = w.transpose().matmul(&w).unwrap();
        let eig = sym_eigenvalues_desc(&gram).unwrap();
        for (i, s) in svd.s.iter().enumerate() {
            assert!(
                (s * s - eig[i]).abs() < 1e-10 * eig[0].max(1.0),
                "eigenvalue {i}: {} vs {}",
                s * s,
                eig[i]
            );
        }
    }

    #[test]
    fn sym_eigenvalues_of_diagonal() {
        let g = DenseMatrix::from_vec(3, 3, vec![2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        let eig = sym_eigenvalues_desc(&g).unwrap();
        assert_eq!(eig, vec![5.0, 2.0, 1.0]);
    }

    #[test]
    fn householder_qr_reconstructs() {
        let w = random_matrix(20, 8, 5);
        let mut a = ColMat::from_row_major(&w);
        let refl = householder_qr(&mut a);
        // Rebuild Q·R by applying Q to the upper-triangular part.
        let n = 8;
        let mut r = ColMat::zeros(20, n);
        for j in 0..n {
            let src = a.col(j);
            r.col_mut(j)[..=j].copy_from_slice(&src[..=j]);
        }
        apply_q(&refl, &mut r);
        let rec = r.to_row_major();
        assert!(max_abs_diff(&rec, &w) < 1e-13 * w.frobenius_norm().max(1.0));
    }
}
