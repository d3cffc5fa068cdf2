//! Weight and activation spectra.
//!
//! For a weight matrix `W` (m×n) with SVD `W = Σᵢ uᵢ sᵢ vᵢᵀ`, the **weight
//! spectrum** is the probability vector `p_i = s_i² / Σ_j s_j²` (length r,
//! the numerical rank). Given a batch `X` (one row per example, b×n), the
//! **activation spectrum** distributes the batch energy over the full right
//! singular basis, null-space completion included:
//!
//! ```text
//! q_i = Σ_b (v_iᵀ x_b)² / Σ_b ‖x_b‖²     for i = 1..n
//! ```
//!
//! Both are probability vectors; their interplay (overlap Σ p_i q_i,
//! covariance, correlation) drives every alignment statistic downstream.
//! [`spectrum_stats`] adds the summary scalars: σ_p and σ_q treat `p` as
//! zero-padded to length n, so
//!
//! ```text
//! σ_p² = (1/n) Σ p_i² − 1/n²
//!      = (1/n)‖p − u‖²                (u the uniform vector)
//!      = (1/n)(2^{−H₂(p)} − 1/n)      (H₂ the collision entropy, bits)
//! ```
//!
//! and σ_p ranges over [0, √(n−1)/n], from uniform to point mass.

use crate::linalg::{self, LinalgError};
use crate::matrix::DenseMatrix;
use std::fmt;

// ───────────────────────────── errors ──────────────────────────────

#[derive(Debug)]
pub enum SpectraError {
    /// SVD sweep cap exceeded.
    NonConvergence { sweeps: usize },
    /// A zero matrix has no spectrum.
    ZeroMatrix,
    /// Batch column count must equal the weight input dimension.
    DimensionMismatch { expected_cols: usize, found_cols: usize },
    /// Activation spectra need at least one nonzero row.
    ZeroBatch,
    /// Second-moment matrices must be square and symmetric within 1e-10.
    NotSymmetric,
    /// Second-moment matrices must have positive trace.
    ZeroTrace,
}

impl fmt::Display for SpectraError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use SpectraError::*;
        match self {
            NonConvergence { sweeps } => {
                write!(f, "SVD did not converge after {sweeps} sweeps")
            }
            ZeroMatrix => write!(f, "zero matrix has no spectrum"),
            DimensionMismatch { expected_cols, found_cols } => write!(
                f,
                "batch has {found_cols} columns but the weight input dimension is {expected_cols}"
            ),
            ZeroBatch => write!(f, "batch is entirely zero"),
            NotSymmetric => write!(f, "second-moment matrix is not symmetric"),
            ZeroTrace => write!(f, "second-moment matrix has zero trace"),
        }
    }
}

impl std::error::Error for SpectraError {}

impl From<LinalgError> for SpectraError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NonConvergence { sweeps } => SpectraError::NonConvergence { sweeps },
            LinalgError::ZeroMatrix => SpectraError::ZeroMatrix,
        }
    }
}

// ───────────────────────────── types ───────────────────────────────

/// Singular value decomposition with a *full* right basis.
///
/// `right_vectors` is n×n orthonormal; its first `numerical_rank` columns
/// are the right singular vectors and the rest complete the null space.
#[derive(Debug, Clone)]
pub struct SvdFactorization {
    /// m×r, orthonormal columns u_i.
    pub left_vectors: DenseMatrix,
    /// Length r, strictly positive, nonincreasing.
    pub singular_values: Vec<f64>,
    /// n×n orthonormal; columns 1..r are v_i, the rest span the null space.
    pub right_vectors: DenseMatrix,
    /// Count of singular values above the conditioning threshold
    /// `max(m,n) · ε · s₁`.
    pub numerical_rank: usize,
}

/// The paired spectra of one (W, X) snapshot.
#[derive(Debug, Clone)]
pub struct SpectrumPair {
    /// Weight spectrum, length r, nonincreasing, sums to 1.
    pub p: Vec<f64>,
    /// Activation spectrum over all n basis directions, sums to 1.
    pub q: Vec<f64>,
    /// Input dimension (columns of W).
    pub n: usize,
    /// Numerical rank of W.
    pub r: usize,
    /// Rows in the batch.
    pub batch_size: usize,
}

/// Summary scalars of a [`SpectrumPair`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpectrumStats {
    pub sigma_p: f64,
    pub sigma_q: f64,
    pub cov_pq: f64,
    /// `None` when either σ is zero (correlation undefined).
    pub pearson: Option<f64>,
    /// Average-rank Spearman correlation; `None` when a rank vector is
    /// constant.
    pub spearman: Option<f64>,
    /// Euclidean distance from zero-padded p to the uniform vector.
    pub dist_to_uniform_p: f64,
    /// Collision (Rényi order-2) entropy of p, in bits.
    pub renyi2_p: f64,
}

// ───────────────────────────── operations ──────────────────────────

/// Root-mean-square norm: Frobenius norm over √(element count).
pub fn rms_norm(m: &DenseMatrix) -> f64 {
    m.frobenius_norm() / ((m.rows() * m.cols()) as f64).sqrt()
}

/// Full SVD with orthonormal null-space completion of the right basis.
pub fn svd(w: &DenseMatrix) -> Result<SvdFactorization, SpectraError> {
    let raw = linalg::svd_full(w)?;
    Ok(SvdFactorization {
        left_vectors: raw.u,
        singular_values: raw.s,
        right_vectors: raw.v,
        numerical_rank: raw.rank,
    })
}

/// Normalized squared singular values `p_i = s_i²/Σs_j²`, length r.
pub fn weight_spectrum(f: &SvdFactorization) -> Result<Vec<f64>, SpectraError> {
    if f.numerical_rank == 0 {
        return Err(SpectraError::ZeroMatrix);
    }
    let sq: Vec<f64> = f.singular_values.iter().map(|s| s * s).collect();
    let total: f64 = sq.iter().sum();
    Ok(sq.iter().map(|v| v / total).collect())
}

/// Normalized squared projections of the batch onto every right basis
/// direction, null-space completion included:
/// `q_i = Σ_b (v_iᵀ x_b)² / Σ_b ‖x_b‖²`, length n.
pub fn activation_spectrum(
    f: &SvdFactorization,
    x: &DenseMatrix,
) -> Result<Vec<f64>, SpectraError> {
    let n = f.right_vectors.rows();
    if x.cols() != n {
        return Err(SpectraError::DimensionMismatch {
            expected_cols: n,
            found_cols: x.cols(),
        });
    }
    let energy: f64 = x.data().iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(SpectraError::ZeroBatch);
    }
    // Y = X V  (b×n): column i holds the projections v_iᵀ x_b.
    let y = x.matmul(&f.right_vectors).expect("shape checked above");
    let mut q = vec![0.0f64; n];
    for b in 0..y.rows() {
        let row = y.row(b);
        for (qi, &v) in q.iter_mut().zip(row) {
            *qi += v * v;
        }
    }
    for qi in &mut q {
        *qi /= energy;
    }
    Ok(q)
}

/// Spectrum the batch would have in the infinite-batch limit, from the
/// population's uncentered second-moment matrix `C`:
/// `q*_i = v_iᵀ C v_i / tr(C)`.
pub fn population_spectrum(
    c: &DenseMatrix,
    f: &SvdFactorization,
) -> Result<Vec<f64>, SpectraError> {
    let n = f.right_vectors.rows();
    if c.rows() != n || c.cols() != n {
        return Err(SpectraError::DimensionMismatch {
            expected_cols: n,
            found_cols: c.cols(),
        });
    }
    let scale = c.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (c.get(i, j) - c.get(j, i)).abs() > 1e-10 * scale {
                return Err(SpectraError::NotSymmetric);
            }
        }
    }
    let trace: f64 = (0..n).map(|i| c.get(i, i)).sum();
    if trace <= 0.0 {
        return Err(SpectraError::ZeroTrace);
    }
    // CV (n×n): column i is C v_i, so q*_i = v_i · (C v_i) / tr(C).
    let cv = c.matmul(&f.right_vectors).expect("shape checked above");
    let q = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for k in 0..n {
                acc += f.right_vectors.get(k, i) * cv.get(k, i);
            }
            acc / trace
        })
        .collect();
    Ok(q)
}

/// Builds both spectra for a (weights, batch) pair in one SVD.
pub fn spectrum_pair(w: &DenseMatrix, x: &DenseMatrix) -> Result<SpectrumPair, SpectraError> {
    if x.cols() != w.cols() {
        return Err(SpectraError::DimensionMismatch {
            expected_cols: w.cols(),
            found_cols: x.cols(),
        });
    }
    let f = svd(w)?;
    let p = weight_spectrum(&f)?;
    let q = activation_spectrum(&f, x)?;
    Ok(SpectrumPair { p, q, n: w.cols(), r: f.numerical_rank, batch_size: x.rows() })
}

/// Spread of a probability vector around uniform: σ² = (1/n)·Σ(vᵢ − 1/n)²,
/// with `values` implicitly zero-padded to length n. The centered form is
/// algebraically `Σvᵢ²/n − 1/n²` but cannot cancel, so an exactly-uniform
/// vector yields exactly zero (which is what gates the Pearson residue).
fn sigma_sq(values: &[f64], n: usize) -> f64 {
    let nf = n as f64;
    let u = 1.0 / nf;
    let head: f64 = values.iter().map(|v| (v - u) * (v - u)).sum();
    let tail = (n - values.len()) as f64 * u * u;
    (head + tail) / nf
}

/// Ranks with average-rank tie handling, 1-based.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0f64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the mean of ranks i+1..=j+1.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson_of(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    // Identical (or exactly reflected) inputs accumulate cov = ±va = ±vb
    // term for term, so perfect correlation is reported as exactly ±1
    // rather than 1 − ε from the square roots.
    if va == vb {
        if cov == va {
            return Some(1.0);
        }
        if cov == -va {
            return Some(-1.0);
        }
    }
    Some((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

/// Summary statistics of a spectrum pair. p is zero-padded to length n for
/// every moment; correlations degenerate to `None` instead of NaN.
pub fn spectrum_stats(sp: &SpectrumPair) -> SpectrumStats {
    let n = sp.n;
    let nf = n as f64;
    let sigma_p = sigma_sq(&sp.p, n).sqrt();
    let sigma_q = sigma_sq(&sp.q, n).sqrt();

    let overlap: f64 = sp.p.iter().zip(&sp.q).map(|(p, q)| p * q).sum();
    let cov_pq = overlap / nf - 1.0 / (nf * nf);

    let pearson = if sigma_p == 0.0 || sigma_q == 0.0 {
        None
    } else {
        Some((cov_pq / (sigma_p * sigma_q)).clamp(-1.0, 1.0))
    };

    let mut p_padded = vec![0.0f64; n];
    p_padded[..sp.p.len()].copy_from_slice(&sp.p);
    let spearman = pearson_of(&average_ranks(&p_padded), &average_ranks(&sp.q));

    let dist_sq: f64 = p_padded.iter().map(|p| (p - 1.0 / nf) * (p - 1.0 / nf)).sum();
    let sum_p_sq: f64 = sp.p.iter().map(|p| p * p).sum();

    SpectrumStats {
        sigma_p,
        sigma_q,
        cov_pq,
        pearson,
        spearman,
        dist_to_uniform_p: dist_sq.sqrt(),
        renyi2_p: -sum_p_sq.log2(),
    }
}
