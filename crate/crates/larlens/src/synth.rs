//! Analytic fixture factory.
//!
//! Each fixture is a (weight, batch) pair engineered so that some part of
//! the alignment report is known in closed form — an oracle the rest of the
//! crate can be tested against:
//!
//! - `rank_k_aligned`: W = Σ_{i≤k} uᵢvᵢᵀ with the batch inside
//!   span(v₁..v_k) → LAR = 1 − ½·log_n k and p uniform over k, regardless
//!   of how the batch energy spreads inside the span.
//! - `point_mass`: rank-1 W with the batch along its singular direction →
//!   LAR = 1 exactly.
//! - `null_space`: W touches only the first k coordinates, the batch only
//!   the rest → the product is exactly zero and LAR = −∞.
//! - `gaussian_init`: W ~ N(0,1)/√m against an isotropic batch → LAR
//!   concentrates at ½ (band claimed only at n ≥ 256, |B| ≥ 8n).
//! - `spiked_spectrum`: singular values set to the given ratios →
//!   p_i = ratio_i²/Σ ratio² exactly.
//! - `isotropic_batch`: N(0,1) batch rows → q ≈ uniform (claimed at
//!   |B| ≥ 128·n with tolerance 0.01).
//!
//! All randomness flows from one 64-bit seed through ChaCha8, a portable
//! counter-based generator with independent sub-streams: stream 0 drives
//! the weights, stream 1 the batch, so fixtures are bit-reproducible and
//! the weight matrix does not change when only batch parameters do.

use crate::lar::Lar;
use crate::linalg::svd_full;
use crate::matrix::DenseMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

// ───────────────────────────── errors ──────────────────────────────

#[derive(Debug)]
pub enum SynthError {
    /// The spec's fields contradict the requested kind (missing k, no null
    /// space left, bad spike ratios, degenerate dimensions, …).
    InconsistentSpec { detail: String },
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthError::InconsistentSpec { detail } => {
                write!(f, "inconsistent fixture spec: {detail}")
            }
        }
    }
}

impl std::error::Error for SynthError {}

fn inconsistent(detail: impl Into<String>) -> SynthError {
    SynthError::InconsistentSpec { detail: detail.into() }
}

// ───────────────────────────── spec types ──────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    RankKAligned,
    PointMass,
    NullSpace,
    GaussianInit,
    SpikedSpectrum,
    IsotropicBatch,
}

impl FixtureKind {
    pub const ALL: [FixtureKind; 6] = [
        FixtureKind::RankKAligned,
        FixtureKind::PointMass,
        FixtureKind::NullSpace,
        FixtureKind::GaussianInit,
        FixtureKind::SpikedSpectrum,
        FixtureKind::IsotropicBatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::RankKAligned => "rank_k_aligned",
            FixtureKind::PointMass => "point_mass",
            FixtureKind::NullSpace => "null_space",
            FixtureKind::GaussianInit => "gaussian_init",
            FixtureKind::SpikedSpectrum => "spiked_spectrum",
            FixtureKind::IsotropicBatch => "isotropic_batch",
        }
    }
}

impl fmt::Display for FixtureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FixtureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FixtureKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = FixtureKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown fixture kind {s:?}; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    /// Weight columns / feature dimension (the logarithm base).
    pub n: usize,
    /// Weight rows.
    pub m: usize,
    /// Batch rows.
    pub batch_size: usize,
    /// Rank / split parameter; required by rank_k_aligned and null_space,
    /// optional (must be 1) for point_mass, rejected elsewhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub seed: u64,
    /// Singular-value ratios; required by spiked_spectrum, rejected
    /// elsewhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spike_ratios: Option<Vec<f64>>,
}

/// The analytically known slice of an alignment report, with the tolerance
/// each claim holds at (1e-9 for exact constructions, wider documented
/// bands for stochastic ones). Absent fields carry no claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedValues {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lar: Option<Lar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lar_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_tolerance: Option<f64>,
    /// All but a vanishing fraction of the batch energy lies in the first
    /// `q_support` right-singular directions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_support: Option<usize>,
}

impl ExpectedValues {
    fn empty() -> Self {
        ExpectedValues {
            lar: None,
            lar_tolerance: None,
            overlap: None,
            p: None,
            p_tolerance: None,
            q: None,
            q_tolerance: None,
            q_support: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub w: DenseMatrix,
    pub x: DenseMatrix,
    pub expected: ExpectedValues,
}

pub const EXACT_TOLERANCE: f64 = 1e-9;
/// LAR band half-width for gaussian_init at n ≥ 256, |B| ≥ 8n.
pub const GAUSSIAN_LAR_BAND: f64 = 0.05;
/// Max per-entry deviation of q from uniform for isotropic_batch at
/// |B| ≥ 128·n.
pub const ISOTROPIC_Q_TOLERANCE: f64 = 0.01;

// ───────────────────────────── rng helpers ─────────────────────────

/// Weight randomness: stream 0 of the seed. Independent of the batch
/// stream, so the same seed yields the same W for any batch size.
fn weight_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

/// Batch randomness: stream 1 of the seed.
fn batch_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    let data: Vec<f64> =
        (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("dimensions validated by caller")
}

/// Random orthonormal set via modified Gram–Schmidt with one
/// re-orthogonalization pass (orthogonality to ~1e-15). Draws are redrawn
/// on near-degeneracy, which for Gaussian vectors never happens in
/// practice.
fn orthonormal_set(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    assert!(count <= dim, "cannot fit {count} orthonormal vectors in dimension {dim}");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(rng, dim);
        for _ in 0..2 {
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= proj * bi;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for vi in &mut v {
            *vi /= norm;
        }
        basis.push(v);
    }
    basis
}

/// W = Σ_i scale_i · u_i v_iᵀ from orthonormal u/v sets.
fn outer_product_sum(
    us: &[Vec<f64>],
    vs: &[Vec<f64>],
    scales: &[f64],
    m: usize,
    n: usize,
) -> DenseMatrix {
    let mut w = DenseMatrix::zeros(m, n);
    for ((u, v), &s) in us.iter().zip(vs).zip(scales) {
        for r in 0..m {
            let su = s * u[r];
            let row = w.row_mut(r);
            for c in 0..n {
                row[c] += su * v[c];
            }
        }
    }
    w
}

// ───────────────────────────── validation ──────────────────────────

fn validate(spec: &FixtureSpec) -> Result<(), SynthError> {
    if spec.m == 0 || spec.n == 0 || spec.batch_size == 0 {
        return Err(inconsistent(format!(
            "all dimensions must be at least 1 (m = {}, n = {}, batch_size = {})",
            spec.m, spec.n, spec.batch_size
        )));
    }
    if spec.n < 2 {
        return Err(inconsistent("n must be at least 2 for a log base".to_string()));
    }
    let min_mn = spec.m.min(spec.n);
    match spec.kind {
        FixtureKind::RankKAligned => {
            let k = spec.k.ok_or_else(|| inconsistent("rank_k_aligned requires k"))?;
            if k == 0 || k > min_mn {
                return Err(inconsistent(format!(
                    "rank_k_aligned needs 1 ≤ k ≤ min(m, n) = {min_mn}, got k = {k}"
                )));
            }
        }
        FixtureKind::PointMass => {
            if let Some(k) = spec.k {
                if k != 1 {
                    return Err(inconsistent(format!("point_mass is rank 1, got k = {k}")));
                }
            }
        }
        FixtureKind::NullSpace => {
            let k = spec.k.ok_or_else(|| inconsistent("null_space requires k"))?;
            if k == 0 || k > min_mn {
                return Err(inconsistent(format!(
                    "null_space needs 1 ≤ k ≤ min(m, n) = {min_mn}, got k = {k}"
                )));
            }
            if k >= spec.n {
                return Err(inconsistent(format!(
                    "null_space with k = {k} and n = {} leaves no null space for the batch",
                    spec.n
                )));
            }
        }
        FixtureKind::GaussianInit | FixtureKind::IsotropicBatch => {
            if spec.k.is_some() {
                return Err(inconsistent(format!("{} takes no k", spec.kind)));
            }
        }
        FixtureKind::SpikedSpectrum => {
            if spec.k.is_some() {
                return Err(inconsistent("spiked_spectrum takes no k; the rank is the number of spike_ratios".to_string()));
            }
            let ratios = spec
                .spike_ratios
                .as_ref()
                .ok_or_else(|| inconsistent("spiked_spectrum requires spike_ratios"))?;
            if ratios.is_empty() || ratios.len() > min_mn {
                return Err(inconsistent(format!(
                    "spiked_spectrum needs 1 ≤ len(spike_ratios) ≤ min(m, n) = {min_mn}, got {}",
                    ratios.len()
                )));
            }
            if ratios.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
                return Err(inconsistent(
                    "spike_ratios must all be finite and positive".to_string(),
                ));
            }
        }
    }
    if spec.kind != FixtureKind::SpikedSpectrum && spec.spike_ratios.is_some() {
        return Err(inconsistent(format!("{} takes no spike_ratios", spec.kind)));
    }
    Ok(())
}

// ───────────────────────────── constructions ───────────────────────

fn log_base_n(x: f64, n: usize) -> f64 {
    x.ln() / (n as f64).ln()
}

fn build_rank_k_aligned(spec: &FixtureSpec) -> Fixture {
    let k = spec.k.expect("validated");
    let mut wr = weight_rng(spec.seed);
    let us = orthonormal_set(&mut wr, k, spec.m);
    let vs = orthonormal_set(&mut wr, k, spec.n);
    let w = outer_product_sum(&us, &vs, &vec![1.0; k], spec.m, spec.n);

    // Batch rows: unit-norm random combinations of v₁..v_k, so the batch
    // lives exactly in the top-k right-singular span.
    let mut xr = batch_rng(spec.seed);
    let mut x = DenseMatrix::zeros(spec.batch_size, spec.n);
    for r in 0..spec.batch_size {
        let mut coeffs = gaussian_vec(&mut xr, k);
        let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm < 1e-8 {
            // Essentially impossible for Gaussian draws; fall back to e₁.
            coeffs = std::iter::once(1.0).chain(std::iter::repeat(0.0)).take(k).collect();
        } else {
            for c in &mut coeffs {
                *c /= norm;
            }
        }
        let row = x.row_mut(r);
        for (v, &c) in vs.iter().zip(&coeffs) {
            for (cell, vi) in row.iter_mut().zip(v) {
                *cell += c * vi;
            }
        }
    }

    let mut expected = ExpectedValues::empty();
    expected.lar = Some(Lar::from_value(1.0 - 0.5 * log_base_n(k as f64, spec.n)));
    expected.lar_tolerance = Some(EXACT_TOLERANCE);
    expected.overlap = Some(1.0 / k as f64);
    expected.p = Some(vec![1.0 / k as f64; k]);
    expected.p_tolerance = Some(EXACT_TOLERANCE);
    expected.q_support = Some(k);
    Fixture { w, x, expected }
}

fn build_point_mass(spec: &FixtureSpec) -> Fixture {
    let mut wr = weight_rng(spec.seed);
    let u = orthonormal_set(&mut wr, 1, spec.m);
    let v = orthonormal_set(&mut wr, 1, spec.n);
    let w = outer_product_sum(&u, &v, &[1.0], spec.m, spec.n);

    let mut xr = batch_rng(spec.seed);
    let mut x = DenseMatrix::zeros(spec.batch_size, spec.n);
    for r in 0..spec.batch_size {
        let c: f64 = xr.sample(StandardNormal);
        let row = x.row_mut(r);
        for (cell, vi) in row.iter_mut().zip(&v[0]) {
            *cell = c * vi;
        }
    }

    let mut expected = ExpectedValues::empty();
    expected.lar = Some(Lar::from_value(1.0));
    expected.lar_tolerance = Some(EXACT_TOLERANCE);
    expected.overlap = Some(1.0);
    expected.p = Some(vec![1.0]);
    expected.p_tolerance = Some(EXACT_TOLERANCE);
    expected.q_support = Some(1);
    Fixture { w, x, expected }
}

fn build_null_space(spec: &FixtureSpec) -> Fixture {
    let k = spec.k.expect("validated");
    // W touches only the first k coordinates, the batch only the last
    // n − k, so every term of every inner product has an exact-zero factor
    // and the product matrix is exactly zero — no cancellation involved.
    let mut wr = weight_rng(spec.seed);
    let scale = 1.0 / (spec.m as f64).sqrt();
    let mut w = DenseMatrix::zeros(spec.m, spec.n);
    for r in 0..spec.m {
        let row = w.row_mut(r);
        for cell in row.iter_mut().take(k) {
            *cell = wr.sample::<f64, _>(StandardNormal) * scale;
        }
    }

    let mut xr = batch_rng(spec.seed);
    let mut x = DenseMatrix::zeros(spec.batch_size, spec.n);
    for r in 0..spec.batch_size {
        let row = x.row_mut(r);
        for cell in row.iter_mut().skip(k) {
            *cell = xr.sample(StandardNormal);
        }
    }

    let mut expected = ExpectedValues::empty();
    expected.lar = Some(Lar::NegInf);
    expected.overlap = Some(0.0);
    Fixture { w, x, expected }
}

fn build_gaussian_init(spec: &FixtureSpec) -> Fixture {
    let mut wr = weight_rng(spec.seed);
    let w = gaussian_matrix(&mut wr, spec.m, spec.n, 1.0 / (spec.m as f64).sqrt());
    let mut xr = batch_rng(spec.seed);
    let x = gaussian_matrix(&mut xr, spec.batch_size, spec.n, 1.0);

    let mut expected = ExpectedValues::empty();
    // The ½ concentration band is only claimed where it was validated:
    // n ≥ 256 with at least 8n batch rows.
    if spec.n >= 256 && spec.batch_size >= 8 * spec.n {
        expected.lar = Some(Lar::from_value(0.5));
        expected.lar_tolerance = Some(GAUSSIAN_LAR_BAND);
    }
    Fixture { w, x, expected }
}

fn build_spiked_spectrum(spec: &FixtureSpec) -> Fixture {
    let mut ratios = spec.spike_ratios.clone().expect("validated");
    // The weight spectrum is reported in descending order; sort so the
    // expected p lines up with it.
    ratios.sort_by(|a, b| b.partial_cmp(a).expect("ratios validated finite"));
    let k = ratios.len();

    let mut wr = weight_rng(spec.seed);
    let us = orthonormal_set(&mut wr, k, spec.m);
    let vs = orthonormal_set(&mut wr, k, spec.n);
    let w = outer_product_sum(&us, &vs, &ratios, spec.m, spec.n);

    let mut xr = batch_rng(spec.seed);
    let x = gaussian_matrix(&mut xr, spec.batch_size, spec.n, 1.0);

    let total: f64 = ratios.iter().map(|r| r * r).sum();
    let mut expected = ExpectedValues::empty();
    expected.p = Some(ratios.iter().map(|r| r * r / total).collect());
    expected.p_tolerance = Some(EXACT_TOLERANCE);
    Fixture { w, x, expected }
}

fn build_isotropic_batch(spec: &FixtureSpec) -> Fixture {
    let mut wr = weight_rng(spec.seed);
    let w = gaussian_matrix(&mut wr, spec.m, spec.n, 1.0 / (spec.m as f64).sqrt());
    let mut xr = batch_rng(spec.seed);
    let x = gaussian_matrix(&mut xr, spec.batch_size, spec.n, 1.0);

    let mut expected = ExpectedValues::empty();
    // The 0.01 uniformity band is claimed from 128·n batch rows up.
    if spec.batch_size >= 128 * spec.n {
        expected.q = Some(vec![1.0 / spec.n as f64; spec.n]);
        expected.q_tolerance = Some(ISOTROPIC_Q_TOLERANCE);
    }
    Fixture { w, x, expected }
}

/// Builds the deterministic (weight, batch, expected-values) triple for a
/// spec. Same seed, same bytes — weights draw from ChaCha8 stream 0 and the
/// batch from stream 1, so W is independent of batch_size.
pub fn make_fixture(spec: &FixtureSpec) -> Result<Fixture, SynthError> {
    validate(spec)?;
    Ok(match spec.kind {
        FixtureKind::RankKAligned => build_rank_k_aligned(spec),
        FixtureKind::PointMass => build_point_mass(spec),
        FixtureKind::NullSpace => build_null_space(spec),
        FixtureKind::GaussianInit => build_gaussian_init(spec),
        FixtureKind::SpikedSpectrum => build_spiked_spectrum(spec),
        FixtureKind::IsotropicBatch => build_isotropic_batch(spec),
    })
}

// ───────────────────────────── MP reference ────────────────────────

/// Qualitative Marchenko–Pastur check for a gaussian_init-style matrix
/// (m ≥ n, entry variance 1/m): estimates σ² from the Frobenius norm, forms
/// the theoretical bulk [σ²(1 − √λ)², σ²(1 + √λ)²] with λ = n/m, and passes
/// when at least 95% of the n squared singular values (zero-padded) land in
/// the bulk *and* each quarter of the bulk holds at least 5% of them. The
/// occupancy requirement rejects degenerate spectra (identity, any
/// repeated-value spectrum) whose support alone would sneak inside the
/// bulk.
///
/// Panics when m < n; callers hand in tall matrices by contract.
pub fn mp_reference_check(w: &DenseMatrix) -> bool {
    let (m, n) = w.shape();
    assert!(m >= n, "Marchenko–Pastur check expects m ≥ n, got {m}×{n}");

    let sigma_sq = w.frobenius_norm().powi(2) / n as f64;
    if sigma_sq <= 0.0 {
        return false;
    }
    let lambda = n as f64 / m as f64;
    let lo = sigma_sq * (1.0 - lambda.sqrt()).powi(2);
    let hi = sigma_sq * (1.0 + lambda.sqrt()).powi(2);

    let mut squared: Vec<f64> = match svd_full(w) {
        Ok(svd) => svd.s.iter().map(|s| s * s).collect(),
        Err(_) => return false,
    };
    squared.resize(n, 0.0);

    let inside = squared.iter().filter(|&&v| v >= lo && v <= hi).count();
    if (inside as f64) < 0.95 * n as f64 {
        return false;
    }

    let mut bins = [0usize; 4];
    let width = (hi - lo) / 4.0;
    for &v in &squared {
        if v < lo || v > hi {
            continue;
        }
        let idx = (((v - lo) / width) as usize).min(3);
        bins[idx] += 1;
    }
    bins.iter().all(|&count| (count as f64) >= 0.05 * n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lar::{analyze, lar_rms};
    use crate::spectra::spectrum_pair;

    fn spec(kind: FixtureKind, n: usize, m: usize, b: usize, k: Option<usize>) -> FixtureSpec {
        FixtureSpec { kind, n, m, batch_size: b, k, seed: 7, spike_ratios: None }
    }

    #[test]
    fn rank_k_aligned_hits_its_closed_form() {
        // n = 256, k = 16 → LAR = 1 − ½·log₂₅₆ 16 = 0.75.
        let fixture =
            make_fixture(&spec(FixtureKind::RankKAligned, 256, 32, 64, Some(16))).unwrap();
        let report = analyze(&fixture.w, &fixture.x, None).unwrap();
        let expected = fixture.expected.lar.unwrap().finite().unwrap();
        assert!((expected - 0.75).abs() < 1e-15, "closed form is 0.75");
        for (name, form) in [
            ("rms", report.lar_rms),
            ("overlap", report.lar_overlap),
            ("cov", report.lar_cov),
            ("corr", report.lar_corr),
        ] {
            let got = form.finite().expect("aligned fixture has finite LAR");
            assert!(
                (got - expected).abs() < EXACT_TOLERANCE,
                "lar_{name} = {got}, expected {expected}"
            );
        }
        let p = fixture.expected.p.unwrap();
        assert_eq!(report.r, 16, "numerical rank equals k");
        assert_eq!(p.len(), 16);
        let pair = spectrum_pair(&fixture.w, &fixture.x).unwrap();
        for (i, (&got, &want)) in pair.p.iter().zip(&p).enumerate() {
            assert!((got - want).abs() < EXACT_TOLERANCE, "p[{i}] = {got}, expected {want}");
        }
        // Batch energy is confined to the top-k right-singular directions.
        let support = fixture.expected.q_support.unwrap();
        let tail: f64 = pair.q[support..].iter().sum();
        assert!(tail.abs() < 1e-9, "q beyond the span should vanish, got {tail}");
        assert!(
            (report.overlap - fixture.expected.overlap.unwrap()).abs() < EXACT_TOLERANCE
        );
    }

    #[test]
    fn rank_k_lar_depends_only_on_k_and_n() {
        // The group-sum argument: however the batch spreads inside the
        // span, LAR is 1 − ½·log_n k. Exercise three seeds.
        for seed in [1u64, 2, 3] {
            let spec = FixtureSpec {
                kind: FixtureKind::RankKAligned,
                n: 64,
                m: 48,
                batch_size: 32,
                k: Some(4),
                seed,
                spike_ratios: None,
            };
            let fixture = make_fixture(&spec).unwrap();
            let got = lar_rms(&fixture.w, &fixture.x).unwrap().finite().unwrap();
            let want = 1.0 - 0.5 * (4f64).ln() / (64f64).ln();
            assert!((got - want).abs() < EXACT_TOLERANCE, "seed {seed}: {got} vs {want}");
        }
    }

    #[test]
    fn point_mass_is_exactly_one() {
        let fixture = make_fixture(&spec(FixtureKind::PointMass, 32, 16, 24, None)).unwrap();
        let report = analyze(&fixture.w, &fixture.x, None).unwrap();
        for form in [report.lar_rms, report.lar_overlap, report.lar_cov, report.lar_corr] {
            assert!((form.finite().unwrap() - 1.0).abs() < EXACT_TOLERANCE);
        }
        assert_eq!(report.r, 1);
        // k = 1 is accepted as an explicit synonym, anything else is not.
        assert!(make_fixture(&spec(FixtureKind::PointMass, 32, 16, 24, Some(1))).is_ok());
        assert!(make_fixture(&spec(FixtureKind::PointMass, 32, 16, 24, Some(2))).is_err());
    }

    #[test]
    fn null_space_product_is_exactly_zero() {
        let fixture = make_fixture(&spec(FixtureKind::NullSpace, 16, 8, 10, Some(4))).unwrap();
        let product = fixture.x.matmul_transpose_b(&fixture.w).unwrap();
        assert_eq!(product.data().iter().filter(|&&v| v != 0.0).count(), 0);
        let report = analyze(&fixture.w, &fixture.x, None).unwrap();
        assert!(report.lar_rms.is_neg_inf());
        assert!(report.lar_overlap.is_neg_inf());
        assert_eq!(report.overlap, 0.0, "overlap is exactly zero");
        assert!(matches!(fixture.expected.lar, Some(Lar::NegInf)));
        assert_eq!(fixture.expected.overlap, Some(0.0));
    }

    #[test]
    fn gaussian_init_concentrates_at_half() {
        let spec = FixtureSpec {
            kind: FixtureKind::GaussianInit,
            n: 256,
            m: 256,
            batch_size: 2048,
            k: None,
            seed: 11,
            spike_ratios: None,
        };
        let fixture = make_fixture(&spec).unwrap();
        assert_eq!(fixture.expected.lar, Some(Lar::from_value(0.5)));
        assert_eq!(fixture.expected.lar_tolerance, Some(GAUSSIAN_LAR_BAND));
        let got = lar_rms(&fixture.w, &fixture.x).unwrap().finite().unwrap();
        assert!(
            (got - 0.5).abs() < GAUSSIAN_LAR_BAND,
            "random-init LAR should concentrate near ½, got {got}"
        );

        // Below the validated size the band is not claimed.
        let small = FixtureSpec { n: 32, m: 32, batch_size: 64, ..spec };
        assert_eq!(make_fixture(&small).unwrap().expected.lar, None);
    }

    #[test]
    fn spiked_spectrum_reproduces_the_ratio_law() {
        // Ratios (3, 1): p₁/p₂ = 9.
        let spec = FixtureSpec {
            kind: FixtureKind::SpikedSpectrum,
            n: 24,
            m: 16,
            batch_size: 12,
            k: None,
            seed: 3,
            spike_ratios: Some(vec![3.0, 1.0]),
        };
        let fixture = make_fixture(&spec).unwrap();
        let expected_p = fixture.expected.p.clone().unwrap();
        assert!((expected_p[0] / expected_p[1] - 9.0).abs() < 1e-12);
        let pair = spectrum_pair(&fixture.w, &fixture.x).unwrap();
        assert_eq!(pair.p.len(), 2);
        for (got, want) in pair.p.iter().zip(&expected_p) {
            assert!((got - want).abs() < EXACT_TOLERANCE);
        }
        assert!((pair.p[0] / pair.p[1] - 9.0).abs() < 1e-6, "measured spike ratio law");

        // Unsorted ratios are reported in spectrum (descending) order.
        let shuffled = FixtureSpec { spike_ratios: Some(vec![1.0, 3.0]), ..spec };
        assert_eq!(make_fixture(&shuffled).unwrap().expected.p, Some(vec![0.9, 0.1]));
    }

    #[test]
    fn isotropic_batch_is_nearly_uniform() {
        let spec = FixtureSpec {
            kind: FixtureKind::IsotropicBatch,
            n: 48,
            m: 32,
            batch_size: 128 * 48,
            k: None,
            seed: 5,
            spike_ratios: None,
        };
        let fixture = make_fixture(&spec).unwrap();
        let q_expected = fixture.expected.q.clone().unwrap();
        let tol = fixture.expected.q_tolerance.unwrap();
        let pair = spectrum_pair(&fixture.w, &fixture.x).unwrap();
        let max_dev = pair
            .q
            .iter()
            .zip(&q_expected)
            .map(|(got, want)| (got - want).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev < tol, "max deviation from uniform q was {max_dev}");

        let small = FixtureSpec { batch_size: 100, ..spec };
        assert_eq!(make_fixture(&small).unwrap().expected.q, None);
    }

    #[test]
    fn fixtures_are_bit_reproducible() {
        for kind in FixtureKind::ALL {
            let spec = FixtureSpec {
                kind,
                n: 16,
                m: 12,
                batch_size: 10,
                k: match kind {
                    FixtureKind::RankKAligned | FixtureKind::NullSpace => Some(3),
                    _ => None,
                },
                seed: 99,
                spike_ratios: match kind {
                    FixtureKind::SpikedSpectrum => Some(vec![2.0, 1.0]),
                    _ => None,
                },
            };
            let a = make_fixture(&spec).unwrap();
            let b = make_fixture(&spec).unwrap();
            assert_eq!(a.w.data(), b.w.data(), "{kind}: weights must be bit-identical");
            assert_eq!(a.x.data(), b.x.data(), "{kind}: batch must be bit-identical");
            assert_eq!(a.expected, b.expected);

            let other = FixtureSpec { seed: 100, ..spec };
            let c = make_fixture(&other).unwrap();
            assert_ne!(a.w.data(), c.w.data(), "{kind}: a new seed must change the weights");
        }
    }

    #[test]
    fn weights_do_not_depend_on_batch_size() {
        let a = make_fixture(&spec(FixtureKind::GaussianInit, 16, 12, 4, None)).unwrap();
        let b = make_fixture(&spec(FixtureKind::GaussianInit, 16, 12, 64, None)).unwrap();
        assert_eq!(a.w.data(), b.w.data(), "weight stream is independent of the batch stream");
    }

    #[test]
    fn inconsistent_specs_are_rejected() {
        // Missing k.
        assert!(make_fixture(&spec(FixtureKind::RankKAligned, 16, 8, 4, None)).is_err());
        // k beyond min(m, n).
        assert!(make_fixture(&spec(FixtureKind::RankKAligned, 16, 8, 4, Some(9))).is_err());
        // No null space left: k = min(m, n) = n.
        assert!(make_fixture(&spec(FixtureKind::NullSpace, 8, 16, 4, Some(8))).is_err());
        // Zero dimension.
        assert!(make_fixture(&spec(FixtureKind::GaussianInit, 16, 0, 4, None)).is_err());
        // Log base too small.
        assert!(make_fixture(&spec(FixtureKind::GaussianInit, 1, 8, 4, None)).is_err());
        // k on a kind that takes none.
        assert!(make_fixture(&spec(FixtureKind::GaussianInit, 16, 8, 4, Some(2))).is_err());
        // spike_ratios on the wrong kind.
        let mut stray = spec(FixtureKind::GaussianInit, 16, 8, 4, None);
        stray.spike_ratios = Some(vec![2.0]);
        assert!(make_fixture(&stray).is_err());
        // Bad ratio values.
        for ratios in [vec![], vec![-1.0], vec![f64::NAN], vec![1.0; 9]] {
            let mut bad = spec(FixtureKind::SpikedSpectrum, 16, 8, 4, None);
            bad.spike_ratios = Some(ratios);
            assert!(make_fixture(&bad).is_err(), "ratios must be nonempty, positive, ≤ min(m,n)");
        }
        let message = make_fixture(&spec(FixtureKind::NullSpace, 8, 16, 4, Some(8)))
            .unwrap_err()
            .to_string();
        assert!(message.contains("null space"), "error should explain the problem: {message}");
    }

    #[test]
    fn fixture_kind_string_round_trip() {
        for kind in FixtureKind::ALL {
            assert_eq!(kind.name().parse::<FixtureKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.name()), "serde and FromStr names agree");
        }
        assert!("banana".parse::<FixtureKind>().is_err());
    }

    #[test]
    fn expected_values_serde_round_trip() {
        let fixture =
            make_fixture(&spec(FixtureKind::RankKAligned, 64, 16, 8, Some(4))).unwrap();
        let json = serde_json::to_string(&fixture.expected).unwrap();
        let back: ExpectedValues = serde_json::from_str(&json).unwrap();
        assert_eq!(back, fixture.expected);
        assert!(!json.contains("spike"), "absent claims are omitted from the sidecar");
    }

    #[test]
    fn mp_check_accepts_gaussian_and_rejects_degenerate_spectra() {
        // The documented reference shape: 4096×512 entries N(0,1)/√m.
        let spec = FixtureSpec {
            kind: FixtureKind::GaussianInit,
            n: 512,
            m: 4096,
            batch_size: 1,
            k: None,
            seed: 42,
            spike_ratios: None,
        };
        let fixture = make_fixture(&spec).unwrap();
        assert!(mp_reference_check(&fixture.w), "a Gaussian-init matrix follows the MP bulk");

        let identity = DenseMatrix::identity(512);
        assert!(!mp_reference_check(&identity), "identity has a point spectrum");

        let mut wr = weight_rng(13);
        let u = orthonormal_set(&mut wr, 1, 4096);
        let v = orthonormal_set(&mut wr, 1, 512);
        let rank1 = outer_product_sum(&u, &v, &[1.0], 4096, 512);
        assert!(!mp_reference_check(&rank1), "rank-1 mass sits outside the bulk");
    }

    #[test]
    #[should_panic(expected = "m ≥ n")]
    fn mp_check_rejects_wide_matrices() {
        let wide = DenseMatrix::zeros(8, 16);
        mp_reference_check(&wide);
    }
}
