//! Companion rank measures.
//!
//! Three scalar summaries of "how many directions matter":
//!
//! - **stable rank** `Σs_i²/s₁²` — energy relative to the top singular
//!   value; equals `1/p₁` for the weight spectrum p.
//! - **effective rank** `exp(−Σ p̃_i ln p̃_i)` with `p̃_i = s_i/Σs_j` — the
//!   exponentiated Shannon entropy of the normalized singular values; a
//!   uniform k-value spectrum scores exactly k.
//! - **k95** — the smallest k such that the top-k eigenvalues of the
//!   batch's second-moment matrix capture at least 95% of its trace.
//!   Uncentered by default (eigendecomposition of XᵀX), so it measures the
//!   same uncentered energy as the activation spectrum; a centered mode is
//!   available behind a flag.

use crate::linalg::{self, LinalgError};
use crate::matrix::{matmul_transa_slices, DenseMatrix};
use crate::spectra::SvdFactorization;
use std::fmt;

/// Cumulative-variance threshold for [`k95`].
const VARIANCE_THRESHOLD: f64 = 0.95;

// ───────────────────────────── errors ──────────────────────────────

#[derive(Debug)]
pub enum RankError {
    /// A zero matrix has no rank structure to summarize.
    ZeroMatrix,
    /// k95 needs at least two rows.
    TooFewRows { rows: usize },
    /// k95 needs nonzero (centered or uncentered) variance.
    ZeroVariance,
    /// Eigensolver sweep cap exceeded.
    NonConvergence { sweeps: usize },
}

impl fmt::Display for RankError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankError::ZeroMatrix => write!(f, "zero matrix has no rank metrics"),
            RankError::TooFewRows { rows } => {
                write!(f, "need at least 2 rows for a variance profile, got {rows}")
            }
            RankError::ZeroVariance => write!(f, "batch has zero variance"),
            RankError::NonConvergence { sweeps } => {
                write!(f, "eigensolver did not converge after {sweeps} sweeps")
            }
        }
    }
}

impl std::error::Error for RankError {}

impl From<LinalgError> for RankError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NonConvergence { sweeps } => RankError::NonConvergence { sweeps },
            LinalgError::ZeroMatrix => RankError::ZeroMatrix,
        }
    }
}

// ───────────────────────────── types ───────────────────────────────

/// Bundle of all three measures plus the entropy weights behind the
/// effective rank.
#[derive(Debug, Clone)]
pub struct RankMetrics {
    pub stable_rank: f64,
    pub effective_rank: f64,
    pub k95: usize,
    /// Normalized singular values `s_i/Σs_j`, length r.
    pub p_tilde: Vec<f64>,
}

// ───────────────────────────── operations ──────────────────────────

/// `Σs_i²/s₁²` — always in [1, r].
pub fn stable_rank(f: &SvdFactorization) -> Result<f64, RankError> {
    if f.numerical_rank == 0 || f.singular_values.is_empty() {
        return Err(RankError::ZeroMatrix);
    }
    let top = f.singular_values[0];
    let total: f64 = f.singular_values.iter().map(|s| (s / top) * (s / top)).sum();
    Ok(total)
}

/// Normalized singular values `s_i/Σs_j`.
pub fn p_tilde(f: &SvdFactorization) -> Result<Vec<f64>, RankError> {
    if f.numerical_rank == 0 || f.singular_values.is_empty() {
        return Err(RankError::ZeroMatrix);
    }
    let total: f64 = f.singular_values.iter().sum();
    Ok(f.singular_values.iter().map(|s| s / total).collect())
}

/// Exponentiated Shannon entropy of `p̃`; a uniform k-value spectrum
/// scores exactly k.
pub fn effective_rank(f: &SvdFactorization) -> Result<f64, RankError> {
    let pt = p_tilde(f)?;
    let entropy: f64 = pt.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    Ok(entropy.exp())
}

/// Smallest k whose top-k second-moment eigenvalues reach 95% of the
/// trace. `center` subtracts the column means first (classic PCA);
/// uncentered is the default used in reports.
pub fn k95(x: &DenseMatrix, center: bool) -> Result<usize, RankError> {
    let (b, n) = x.shape();
    if b < 2 {
        return Err(RankError::TooFewRows { rows: b });
    }
    let mut work = x.clone();
    if center {
        let mut means = vec![0.0f64; n];
        for i in 0..b {
            for (mj, &v) in means.iter_mut().zip(work.row(i)) {
                *mj += v;
            }
        }
        for mj in &mut means {
            *mj /= b as f64;
        }
        for i in 0..b {
            for (v, mj) in work.row_mut(i).iter_mut().zip(&means) {
                *v -= mj;
            }
        }
    }
    // Gram matrix G = XᵀX (n×n). Shares of its trace are what we rank, so
    // the 1/b normalization is irrelevant.
    let mut gram = DenseMatrix::zeros(n, n);
    matmul_transa_slices(work.data(), work.data(), b, n, n, gram.data_mut());

    let mut eigs = linalg::sym_eigenvalues_desc(&gram)?;
    // Rounding can leave tiny negative eigenvalues on a PSD matrix.
    for e in &mut eigs {
        if *e < 0.0 {
            *e = 0.0;
        }
    }
    let total: f64 = eigs.iter().sum();
    if total <= 0.0 {
        return Err(RankError::ZeroVariance);
    }
    let mut cumulative = 0.0;
    for (i, e) in eigs.iter().enumerate() {
        cumulative += e;
        if cumulative >= VARIANCE_THRESHOLD * total {
            return Ok(i + 1);
        }
    }
    Ok(n)
}

/// All measures in one call, sharing the SVD.
pub fn rank_metrics(
    f: &SvdFactorization,
    x: &DenseMatrix,
    center: bool,
) -> Result<RankMetrics, RankError> {
    Ok(RankMetrics {
        stable_rank: stable_rank(f)?,
        effective_rank: effective_rank(f)?,
        k95: k95(x, center)?,
        p_tilde: p_tilde(f)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn fake_svd(singulars: &[f64]) -> SvdFactorization {
        // Only the singular values matter for the rank measures under test.
        let r = singulars.len();
        SvdFactorization {
            left_vectors: DenseMatrix::identity(r),
            singular_values: singulars.to_vec(),
            right_vectors: DenseMatrix::identity(r),
            numerical_rank: r,
        }
    }

    #[test]
    fn stable_rank_examples() {
        let n = 7;
        let f = spectra::svd(&DenseMatrix::identity(n)).unwrap();
        assert!((stable_rank(&f).unwrap() - n as f64).abs() < 1e-12, "identity fills all axes");

        assert_eq!(stable_rank(&fake_svd(&[5.0])).unwrap(), 1.0, "rank one is exactly 1");

        let sr = stable_rank(&fake_svd(&[4.0, 3.0])).unwrap();
        assert!((sr - 1.5625).abs() < 1e-14, "25/16 expected, got {sr}");
    }

    #[test]
    fn stable_rank_is_inverse_leading_weight_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..100 {
            let m = rng.gen_range(3..20);
            let n = rng.gen_range(2..20);
            let w = DenseMatrix::from_fn(m, n, |_, _| rng.sample(rand_distr::StandardNormal));
            let f = spectra::svd(&w).unwrap();
            let p = spectra::weight_spectrum(&f).unwrap();
            let sr = stable_rank(&f).unwrap();
            assert!(
                (sr - 1.0 / p[0]).abs() < 1e-12 * sr.max(1.0),
                "stable rank must equal 1/p1: {sr} vs {}",
                1.0 / p[0]
            );
        }
    }

    #[test]
    fn effective_rank_examples() {
        for k in [1usize, 2, 5, 9] {
            let er = effective_rank(&fake_svd(&vec![2.5; k])).unwrap();
            assert!((er - k as f64).abs() < 1e-9, "uniform {k}-spectrum scores {er}");
        }
        let er = effective_rank(&fake_svd(&[2.0, 1.0])).unwrap();
        let expected = (3.0f64.ln() - (2.0 / 3.0) * 2.0f64.ln()).exp();
        assert!((er - expected).abs() < 1e-12, "entropy arithmetic for s = (2,1)");
        assert!((er - 1.8899).abs() < 5e-5, "rounded value from the closed form");
    }

    #[test]
    fn rank_measures_are_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let w = DenseMatrix::from_fn(12, 9, |_, _| rng.sample(rand_distr::StandardNormal));
        let f = spectra::svd(&w).unwrap();
        let f_scaled = spectra::svd(&w.scaled(7.5)).unwrap();
        assert!(
            (stable_rank(&f).unwrap() - stable_rank(&f_scaled).unwrap()).abs() < 1e-10,
            "stable rank ignores global scale"
        );
        assert!(
            (effective_rank(&f).unwrap() - effective_rank(&f_scaled).unwrap()).abs() < 1e-10,
            "effective rank ignores global scale"
        );
    }

    #[test]
    fn k95_examples() {
        // Batch spanning one direction.
        let one_dir = DenseMatrix::from_fn(6, 4, |i, j| if j == 1 { (i + 1) as f64 } else { 0.0 });
        assert_eq!(k95(&one_dir, false).unwrap(), 1);

        // Exact eigenvalue shares (0.90, 0.06, 0.04) → cumulative 0.96 at k = 2.
        let shares = DenseMatrix::from_fn(3, 3, |i, j| {
            if i == j {
                [0.90f64, 0.06, 0.04][i].sqrt()
            } else {
                0.0
            }
        });
        assert_eq!(k95(&shares, false).unwrap(), 2);

        // Both sides of the 95% boundary, with margin well above solver noise.
        let barely_over = DenseMatrix::from_fn(2, 2, |i, j| {
            if i == j {
                [0.950001f64, 0.049999][i].sqrt()
            } else {
                0.0
            }
        });
        assert_eq!(k95(&barely_over, false).unwrap(), 1, "crossing the threshold stops at k = 1");
        let barely_under = DenseMatrix::from_fn(2, 2, |i, j| {
            if i == j {
                [0.949999f64, 0.050001][i].sqrt()
            } else {
                0.0
            }
        });
        assert_eq!(k95(&barely_under, false).unwrap(), 2, "just under the threshold needs k = 2");
    }

    #[test]
    fn k95_isotropic_limit() {
        let n = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = DenseMatrix::from_fn(20_000, n, |_, _| rng.sample(rand_distr::StandardNormal));
        let k = k95(&x, false).unwrap();
        let expected = (VARIANCE_THRESHOLD * n as f64).ceil() as i64;
        assert!(
            (k as i64 - expected).abs() <= 2,
            "isotropic k95 should be near ceil(0.95n) = {expected}, got {k}"
        );
    }

    #[test]
    fn k95_invariances_and_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let x = DenseMatrix::from_fn(50, 6, |_, j| {
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            g * (1.0 + j as f64)
        });
        let base = k95(&x, false).unwrap();

        let mut order: Vec<usize> = (0..50).collect();
        order.shuffle(&mut rng);
        let permuted = DenseMatrix::from_fn(50, 6, |i, j| x.get(order[i], j));
        assert_eq!(k95(&permuted, false).unwrap(), base, "row order is irrelevant");
        assert_eq!(k95(&x.scaled(0.125), false).unwrap(), base, "global scale is irrelevant");

        // A large common offset dominates the uncentered second moment but
        // vanishes under centering.
        let offset = DenseMatrix::from_fn(50, 6, |i, j| 100.0 + 0.01 * x.get(i, j));
        assert_eq!(k95(&offset, false).unwrap(), 1, "mean direction swallows the variance");
        assert!(k95(&offset, true).unwrap() > 1, "centering restores the noise directions");
    }

    #[test]
    fn k95_rejects_degenerate_batches() {
        assert!(matches!(
            k95(&DenseMatrix::zeros(1, 4), false),
            Err(RankError::TooFewRows { rows: 1 })
        ));
        assert!(matches!(k95(&DenseMatrix::zeros(5, 4), false), Err(RankError::ZeroVariance)));
        let constant = DenseMatrix::from_fn(5, 4, |_, _| 3.0);
        assert!(matches!(k95(&constant, true), Err(RankError::ZeroVariance)));
    }

    #[test]
    fn bundle_shares_consistent_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let w = DenseMatrix::from_fn(10, 6, |_, _| rng.sample(rand_distr::StandardNormal));
        let x = DenseMatrix::from_fn(32, 6, |_, _| rng.sample(rand_distr::StandardNormal));
        let f = spectra::svd(&w).unwrap();
        let rm = rank_metrics(&f, &x, false).unwrap();
        assert_eq!(rm.k95, k95(&x, false).unwrap());
        assert!((rm.stable_rank - stable_rank(&f).unwrap()).abs() < 1e-15);
        assert!((rm.p_tilde.iter().sum::<f64>() - 1.0).abs() < 1e-12, "p_tilde sums to one");
        assert!(rm.effective_rank >= 1.0 - 1e-12 && rm.effective_rank <= 6.0 + 1e-12);
    }
}
