//! Spectral diagnostics for training runs.
//!
//! The crate is organized around one quantity: the log-alignment ratio (LAR)
//! of a weight matrix `W ∈ R^{m×n}` against a batch of input activations
//! `X ∈ R^{b×n}`,
//!
//! ```text
//! LAR = log_n( ‖WX‖_rms / (‖W‖_rms · ‖X‖_rms) )
//! ```
//!
//! where `‖·‖_rms` is the Frobenius norm divided by the square root of the
//! element count. LAR measures how much of the batch's energy lands in the
//! directions the weight matrix actually amplifies: `0.5` for generic
//! (unaligned) matrices, `1.0` for a rank-one pair in perfect alignment,
//! `-∞` when the batch lives entirely in the null space.
//!
//! Modules:
//! - [`matrix`]: dense row-major `f64` matrices and multiply kernels.
//! - [`tensorio`]: NPY tensor files and the run-trace CSV format.
//! - [`spectra`]: SVD, weight/activation spectra, and spectrum statistics.
//! - [`lar`]: the four equivalent LAR forms, decompositions, and reports.
//! - [`rankmetrics`]: stable rank, effective rank, and 95%-variance rank.
//! - [`detector`]: overfitting onset, LAR decline, and generalization gap.
//! - [`synth`]: seeded synthetic fixtures with analytically known answers.
//! - [`grokkit`]: a from-scratch transformer lab for grokking experiments.
//! - [`cli`]: the `larlens` command-line front end.

pub mod cli;
pub mod detector;
pub mod grokkit;
pub mod lar;
pub(crate) mod linalg;
pub mod matrix;
pub mod rankmetrics;
pub mod spectra;
pub mod synth;
pub mod tensorio;

pub use matrix::DenseMatrix;
