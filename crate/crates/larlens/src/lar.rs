//! The log-alignment ratio and its report.
//!
//! For weights `W` (m×n) and a batch `X` (b×n, one example per row), the
//! alignment of the two is
//!
//! ```text
//! LAR = log_n( ‖WX‖_RMS / (‖W‖_RMS · ‖X‖_RMS) )
//! ```
//!
//! which a short calculation rewrites in three more ways, all through the
//! spectra p (weights) and q (activations):
//!
//! ```text
//! LAR = 1 + ½ log_n( Σ_{i≤r} p_i q_i )                      (overlap form)
//!     = 1 + ½ log_n( n·cov(p,q) + 1/n )                     (covariance form)
//!     = 1 + ½ log_n( n·σ_p·σ_q·corr(p,q) + 1/n )            (correlation form)
//! ```
//!
//! The four are algebraically identical; this module implements each along
//! its own route so their agreement is a genuine numerical cross-check: the
//! RMS form walks the dense product `X·Wᵀ` in one pass and never touches the
//! SVD, while the other three go through the spectra.
//!
//! Useful landmarks: a perfectly aligned rank-1 pair scores 1; an isotropic
//! random pair scores ~1/2; activations entirely inside the null space give
//! −∞, carried as an explicit sentinel (never NaN). The top-k split
//! `L_k = 1 + ½log_n Σ_{i≤k} p_i q_i` with remainder `Δ_k = LAR − L_k`
//! localizes where the alignment lives, and `k_pred = n^{2(1−LAR)}` predicts
//! how many directions an aligned, k-concentrated system is using.

use crate::matrix::{dot, DenseMatrix};
use crate::rankmetrics::{self, RankError};
use crate::spectra::{self, SpectraError, SpectrumPair, SpectrumStats};
use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::fmt;

/// Schema tag stamped into every serialized report.
pub const REPORT_SCHEMA_VERSION: &str = "larlens-report-1";

/// Default top-k split points for reports (clipped to the rank).
pub const DEFAULT_KS: [usize; 5] = [1, 2, 3, 5, 10];

/// Values outside this open interval are unusual in practice and flagged.
const PRACTICAL_RANGE: (f64, f64) = (0.3, 0.8);

// ───────────────────────────── sentinel ────────────────────────────

/// A real alignment value or the −∞ sentinel (activations in the null
/// space). JSON encodes the sentinel as `{"value": null, "neg_inf": true}`
/// and finite values as plain numbers, so traces never carry NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lar {
    Finite(f64),
    NegInf,
}

impl Lar {
    /// Classifies a raw f64. NaN is rejected loudly — every caller computes
    /// logs of checked-nonnegative arguments, so NaN means a caller bug.
    pub fn from_value(v: f64) -> Lar {
        assert!(!v.is_nan(), "alignment value must not be NaN");
        if v == f64::NEG_INFINITY {
            Lar::NegInf
        } else {
            Lar::Finite(v)
        }
    }

    /// Numeric view; the sentinel maps back to `f64::NEG_INFINITY`.
    pub fn value(&self) -> f64 {
        match self {
            Lar::Finite(v) => *v,
            Lar::NegInf => f64::NEG_INFINITY,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Lar::Finite(v) => Some(*v),
            Lar::NegInf => None,
        }
    }

    pub fn is_neg_inf(&self) -> bool {
        matches!(self, Lar::NegInf)
    }
}

impl fmt::Display for Lar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lar::Finite(v) => write!(f, "{v}"),
            Lar::NegInf => write!(f, "-inf"),
        }
    }
}

impl Serialize for Lar {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Lar::Finite(v) => s.serialize_f64(*v),
            Lar::NegInf => {
                use serde::ser::SerializeStruct;
                let mut st = s.serialize_struct("Lar", 2)?;
                st.serialize_field("value", &Option::<f64>::None)?;
                st.serialize_field("neg_inf", &true)?;
                st.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Lar {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct LarVisitor;

        impl<'de> Visitor<'de> for LarVisitor {
            type Value = Lar;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or a {\"value\": null, \"neg_inf\": true} object")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Lar, E> {
                if v.is_nan() {
                    return Err(E::custom("alignment value must not be NaN"));
                }
                Ok(Lar::from_value(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Lar, E> {
                Ok(Lar::Finite(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Lar, E> {
                Ok(Lar::Finite(v as f64))
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Lar, A::Error> {
                let mut value: Option<Option<f64>> = None;
                let mut neg_inf = false;
                while let Some(key) = map.next_key::<String>()? {
                    match key.as_str() {
                        "value" => value = Some(map.next_value()?),
                        "neg_inf" => neg_inf = map.next_value()?,
                        _ => {
                            let _: de::IgnoredAny = map.next_value()?;
                        }
                    }
                }
                if neg_inf {
                    Ok(Lar::NegInf)
                } else if let Some(Some(v)) = value {
                    Ok(Lar::Finite(v))
                } else {
                    Err(de::Error::custom("sentinel object needs neg_inf or a value"))
                }
            }
        }

        d.deserialize_any(LarVisitor)
    }
}

// ───────────────────────────── errors ──────────────────────────────

#[derive(Debug)]
pub enum LarError {
    /// log base n needs n ≥ 2.
    BaseTooSmall { n: usize },
    ZeroWeights,
    ZeroBatch,
    /// Inner dimensions disagree; carries both full shapes for messages.
    DimensionMismatch { weight_shape: (usize, usize), batch_shape: (usize, usize) },
    /// Decomposition index outside 1..=r.
    KOutOfRange { k: usize, r: usize },
    /// Decomposition is undefined when the total overlap is zero.
    ZeroOverlap,
    Spectra(SpectraError),
    Rank(RankError),
}

impl fmt::Display for LarError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use LarError::*;
        match self {
            BaseTooSmall { n } => write!(f, "log base must be at least 2, got n = {n}"),
            ZeroWeights => write!(f, "weight matrix is identically zero"),
            ZeroBatch => write!(f, "activation batch is identically zero"),
            DimensionMismatch { weight_shape, batch_shape } => write!(
                f,
                "weights are {}x{} but activations are {}x{}: column counts must match",
                weight_shape.0, weight_shape.1, batch_shape.0, batch_shape.1
            ),
            KOutOfRange { k, r } => write!(f, "k = {k} outside the valid range 1..={r}"),
            ZeroOverlap => write!(f, "total overlap is zero; decomposition undefined"),
            Spectra(e) => write!(f, "{e}"),
            Rank(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for LarError {}

impl From<SpectraError> for LarError {
    fn from(e: SpectraError) -> Self {
        LarError::Spectra(e)
    }
}

impl From<RankError> for LarError {
    fn from(e: RankError) -> Self {
        LarError::Rank(e)
    }
}

fn ensure_base(n: usize) -> Result<(), LarError> {
    if n < 2 {
        Err(LarError::BaseTooSmall { n })
    } else {
        Ok(())
    }
}

/// `1 + ½ log_n(arg)`, with nonpositive arguments collapsing to the −∞
/// sentinel (never a NaN).
fn log_form(arg: f64, n: usize) -> Lar {
    if arg <= 0.0 {
        Lar::NegInf
    } else {
        Lar::Finite(1.0 + 0.5 * arg.ln() / (n as f64).ln())
    }
}

// ───────────────────────────── the four forms ──────────────────────

/// Direct definition: one pass over the rows of `X·Wᵀ`, never touching the
/// SVD — the verification route for the three spectral forms.
pub fn lar_rms(w: &DenseMatrix, x: &DenseMatrix) -> Result<Lar, LarError> {
    if x.cols() != w.cols() {
        return Err(LarError::DimensionMismatch {
            weight_shape: w.shape(),
            batch_shape: x.shape(),
        });
    }
    let n = w.cols();
    ensure_base(n)?;
    let w_rms = spectra::rms_norm(w);
    if w_rms == 0.0 {
        return Err(LarError::ZeroWeights);
    }
    let x_rms = spectra::rms_norm(x);
    if x_rms == 0.0 {
        return Err(LarError::ZeroBatch);
    }
    let (b, m) = (x.rows(), w.rows());
    let mut sum_sq = 0.0f64;
    for bi in 0..b {
        let xrow = x.row(bi);
        for wi in 0..m {
            let v = dot(w.row(wi), xrow);
            sum_sq += v * v;
        }
    }
    if sum_sq == 0.0 {
        return Ok(Lar::NegInf);
    }
    let prod_rms = (sum_sq / (b * m) as f64).sqrt();
    Ok(Lar::Finite((prod_rms / (w_rms * x_rms)).ln() / (n as f64).ln()))
}

/// `Σ_{i≤r} p_i q_i`, summed left to right — the one overlap ordering every
/// spectral form and the decomposition share.
pub fn overlap(sp: &SpectrumPair) -> f64 {
    sp.p.iter().zip(&sp.q).map(|(p, q)| p * q).sum()
}

/// Overlap form: `1 + ½ log_n Σ p_i q_i`.
pub fn lar_overlap(sp: &SpectrumPair) -> Result<Lar, LarError> {
    ensure_base(sp.n)?;
    Ok(log_form(overlap(sp), sp.n))
}

/// Covariance form: `1 + ½ log_n(n·cov(p,q) + 1/n)` with
/// `cov = (1/n)Σp_iq_i − 1/n²` (p zero-padded to length n).
pub fn lar_cov(sp: &SpectrumPair) -> Result<Lar, LarError> {
    ensure_base(sp.n)?;
    let nf = sp.n as f64;
    let cov = overlap(sp) / nf - 1.0 / (nf * nf);
    Ok(log_form(nf * cov + 1.0 / nf, sp.n))
}

/// Correlation form: `1 + ½ log_n(n·σ_p·σ_q·corr(p,q) + 1/n)`. A degenerate
/// spectrum (σ = 0) has no correlation; its cross term is exactly zero.
pub fn lar_corr(sp: &SpectrumPair) -> Result<Lar, LarError> {
    ensure_base(sp.n)?;
    let st = spectra::spectrum_stats(sp);
    let nf = sp.n as f64;
    let cross = match st.pearson {
        Some(c) => nf * st.sigma_p * st.sigma_q * c,
        None => 0.0,
    };
    Ok(log_form(cross + 1.0 / nf, sp.n))
}

// ───────────────────────────── decomposition ───────────────────────

/// Top-k contributions `L_k = 1 + ½log_n Σ_{i≤k} p_i q_i` and remainders
/// `Δ_k = ½ log_n(total/partial)`, sharing [`overlap`]'s summation order so
/// `L_k + Δ_k` reproduces the overlap-form value and `Δ_r` is exactly zero.
///
/// A `Δ_k` of `None` means the top-k block carries no overlap at all
/// (`L_k = −∞`, `Δ_k = +∞`); JSON renders it as null.
pub fn lar_decomposition(
    sp: &SpectrumPair,
    ks: &[usize],
) -> Result<(BTreeMap<usize, Lar>, BTreeMap<usize, Option<f64>>), LarError> {
    ensure_base(sp.n)?;
    for &k in ks {
        if k < 1 || k > sp.r {
            return Err(LarError::KOutOfRange { k, r: sp.r });
        }
    }
    let mut prefix = Vec::with_capacity(sp.r);
    let mut acc = 0.0f64;
    for (p, q) in sp.p.iter().zip(&sp.q) {
        acc += p * q;
        prefix.push(acc);
    }
    let total = acc;
    if total <= 0.0 {
        return Err(LarError::ZeroOverlap);
    }
    let ln_n = (sp.n as f64).ln();
    let ln_total = total.ln();
    let mut l = BTreeMap::new();
    let mut delta = BTreeMap::new();
    for &k in ks {
        let partial = prefix[k - 1];
        if partial <= 0.0 {
            l.insert(k, Lar::NegInf);
            delta.insert(k, None);
        } else {
            l.insert(k, Lar::Finite(1.0 + 0.5 * partial.ln() / ln_n));
            delta.insert(k, Some(0.5 * (ln_total - partial.ln()) / ln_n));
        }
    }
    Ok((l, delta))
}

/// Effective dimension predicted by an alignment value: `n^{2(1−lar)}`.
///
/// # Panics
/// When `n < 2` or `lar` is not finite (callers must skip the −∞ sentinel).
pub fn k_pred(lar: f64, n: usize) -> f64 {
    assert!(n >= 2, "effective-dimension base must be at least 2, got n = {n}");
    assert!(lar.is_finite(), "effective dimension needs a finite alignment, got {lar}");
    (n as f64).powf(2.0 * (1.0 - lar))
}

/// The default report split points that exist at rank r.
pub fn default_ks(r: usize) -> Vec<usize> {
    DEFAULT_KS.iter().copied().filter(|&k| k <= r).collect()
}

// ───────────────────────────── report ──────────────────────────────

/// Everything one (W, X) snapshot yields, JSON-ready.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub schema_version: String,
    pub lar_rms: Lar,
    pub lar_overlap: Lar,
    pub lar_cov: Lar,
    pub lar_corr: Lar,
    /// Σ p_i q_i.
    pub overlap: f64,
    /// Top-k contributions, keyed by k.
    #[serde(rename = "L")]
    pub l: BTreeMap<usize, Lar>,
    /// Remainders; null means +∞ (no overlap in the top-k block).
    #[serde(rename = "Delta")]
    pub delta: BTreeMap<usize, Option<f64>>,
    /// Absent when the alignment is −∞.
    pub k_pred: Option<f64>,
    pub stats: SpectrumStats,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub batch_size: usize,
    /// Leading weight-spectrum mass.
    pub p1: f64,
    /// Activation mass on the leading singular direction.
    pub q1: f64,
    pub stable_rank: f64,
    pub effective_rank: f64,
    /// Absent when the batch has a single row.
    pub k95: Option<usize>,
    pub warnings: Vec<String>,
}

/// Full pipeline for one snapshot: both LAR routes, the decomposition at
/// `ks` (defaults clipped to rank when `None`), spectra statistics, and the
/// companion rank measures.
pub fn analyze(
    w: &DenseMatrix,
    x: &DenseMatrix,
    ks: Option<&[usize]>,
) -> Result<AlignmentReport, LarError> {
    let rms = lar_rms(w, x)?;

    let f = spectra::svd(w)?;
    let p = spectra::weight_spectrum(&f)?;
    let q = spectra::activation_spectrum(&f, x)?;
    let sp = SpectrumPair {
        p,
        q,
        n: w.cols(),
        r: f.numerical_rank,
        batch_size: x.rows(),
    };

    let stats = spectra::spectrum_stats(&sp);
    let ov = overlap(&sp);
    let form_overlap = lar_overlap(&sp)?;
    let form_cov = lar_cov(&sp)?;
    let form_corr = lar_corr(&sp)?;

    let mut warnings = Vec::new();

    let defaults;
    let ks_slice = match ks {
        Some(list) => list,
        None => {
            defaults = default_ks(sp.r);
            &defaults
        }
    };
    let (l_map, delta_map) = if ov > 0.0 {
        lar_decomposition(&sp, ks_slice)?
    } else {
        warnings.push(
            "overlap is zero (activations lie in the null space); \
             decomposition and k_pred are undefined"
                .to_string(),
        );
        (BTreeMap::new(), BTreeMap::new())
    };

    let kp = rms.finite().map(|v| k_pred(v, sp.n));

    let stable_rank = rankmetrics::stable_rank(&f)?;
    let effective_rank = rankmetrics::effective_rank(&f)?;
    let k95 = if x.rows() >= 2 {
        Some(rankmetrics::k95(x, false)?)
    } else {
        warnings.push("batch has a single row: k95 not computed".to_string());
        None
    };

    if sp.r < sp.n {
        warnings.push(format!(
            "numerical rank r = {} < n = {}: activation mass beyond r depends on the \
             null-space basis",
            sp.r, sp.n
        ));
    }
    if let Some(v) = rms.finite() {
        if v <= PRACTICAL_RANGE.0 || v >= PRACTICAL_RANGE.1 {
            warnings.push(format!(
                "alignment {v:.4} is outside the practical range ({}, {})",
                PRACTICAL_RANGE.0, PRACTICAL_RANGE.1
            ));
        }
    }
    if let Some(kp) = kp {
        let n_sq = (sp.n as f64) * (sp.n as f64);
        if !(1.0..=n_sq).contains(&kp) {
            warnings.push(format!("k_pred = {kp:.3} is outside [1, n²] = [1, {n_sq}]"));
        }
    }
    if ov > 0.0 && (form_cov.is_neg_inf() || form_corr.is_neg_inf()) {
        warnings.push(
            "floating-point cancellation collapsed a covariance-form log argument to zero"
                .to_string(),
        );
    }

    Ok(AlignmentReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        lar_rms: rms,
        lar_overlap: form_overlap,
        lar_cov: form_cov,
        lar_corr: form_corr,
        overlap: ov,
        l: l_map,
        delta: delta_map,
        k_pred: kp,
        stats,
        n: sp.n,
        m: w.rows(),
        r: sp.r,
        batch_size: sp.batch_size,
        p1: sp.p[0],
        q1: sp.q[0],
        stable_rank,
        effective_rank,
        k95,
        warnings,
    })
}
