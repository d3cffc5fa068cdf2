//! Training-time overfitting diagnostics over metric traces.
//!
//! Four pure functions over a loaded trace, composed by [`detect`]:
//!
//! - **onset**: the first evaluation step whose trailing-window mean
//!   validation loss exceeds the running minimum by a relative threshold.
//!   The running minimum is taken over the evaluations *strictly before*
//!   the current window, so a window climbing away from an established
//!   minimum triggers and the minimum inside a fresh window cannot mask
//!   itself. (On the worked example in the tests: means 1.86, 1.84, 1.86,
//!   1.90… against a prior minimum of 1.8 fire first at the 1.90 window —
//!   a naive all-history minimum would fire three windows too early, on a
//!   window that still contains the minimum itself.)
//! - **LAR differential**: baseline-run alignment minus this run's, at
//!   common steps — a validation-free generalization signal.
//! - **generalization gap**: validation loss minus centred-moving-average
//!   training loss. The average truncates symmetrically at the edges
//!   (half-width `min(h, i, len−1−i)`), so it is exact on linear data
//!   everywhere, not just away from the ends.
//! - **decline table**: ordinary-least-squares slopes of alignment vs step
//!   in fixed windows anchored right after the alignment peak, reported as
//!   a *decline* (negated) per 1000 steps; the final truncated window is
//!   labeled "→ end" in the CSV rendering.

use crate::tensorio::TraceRow;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

// ───────────────────────────── errors ──────────────────────────────

#[derive(Debug)]
pub enum DetectorError {
    InvalidConfig { detail: String },
    /// Onset detection needs at least `window_evals` validation points.
    TooFewValidationPoints { required: usize, found: usize },
    /// A required trace column is entirely absent.
    MissingColumn { column: &'static str },
    /// The run and baseline traces share no steps with finite alignment.
    NoCommonSteps,
    /// Peak/decline analysis needs a finite alignment value somewhere.
    NoFiniteAlignment,
    /// Decline fitting needs at least two post-peak points.
    InsufficientDeclinePoints { found: usize },
    Io(std::io::Error),
}

impl fmt::Display for DetectorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use DetectorError::*;
        match self {
            InvalidConfig { detail } => write!(f, "invalid detector config: {detail}"),
            TooFewValidationPoints { required, found } => write!(
                f,
                "need at least {required} validation-loss entries, found {found}"
            ),
            MissingColumn { column } => write!(f, "trace has no {column} column"),
            NoCommonSteps => write!(f, "run and baseline share no steps with finite alignment"),
            NoFiniteAlignment => write!(f, "trace has no finite alignment values"),
            InsufficientDeclinePoints { found } => {
                write!(f, "need at least 2 post-peak alignment points, found {found}")
            }
            Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for DetectorError {}

impl From<std::io::Error> for DetectorError {
    fn from(e: std::io::Error) -> Self {
        DetectorError::Io(e)
    }
}

// ───────────────────────────── config ──────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Trailing-window length for the onset rule, in evaluations.
    pub window_evals: usize,
    /// Relative rise over the running minimum that counts as onset.
    pub rel_threshold: f64,
    /// Centered moving-average width for training-loss smoothing, in
    /// logged entries; must be odd (even values are bumped up by one).
    pub smooth_window_steps: usize,
    /// Stride of the post-peak decline windows, in steps.
    pub decline_window_steps: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            window_evals: 5,
            rel_threshold: 0.02,
            smooth_window_steps: 15,
            decline_window_steps: 1000,
        }
    }
}

impl DetectorConfig {
    /// Checks ranges and normalizes an even smoothing window to the next
    /// odd value (a centered window needs a middle element).
    pub fn validated(mut self) -> Result<DetectorConfig, DetectorError> {
        if self.window_evals == 0 {
            return Err(DetectorError::InvalidConfig {
                detail: "window_evals must be positive".into(),
            });
        }
        if !(self.rel_threshold > 0.0 && self.rel_threshold < 1.0) {
            return Err(DetectorError::InvalidConfig {
                detail: format!("rel_threshold must be in (0, 1), got {}", self.rel_threshold),
            });
        }
        if self.smooth_window_steps == 0 {
            return Err(DetectorError::InvalidConfig {
                detail: "smooth_window_steps must be positive".into(),
            });
        }
        if self.decline_window_steps == 0 {
            return Err(DetectorError::InvalidConfig {
                detail: "decline_window_steps must be positive".into(),
            });
        }
        if self.smooth_window_steps % 2 == 0 {
            self.smooth_window_steps += 1;
        }
        Ok(self)
    }
}

// ───────────────────────────── results ─────────────────────────────

/// One (step, value) sample of a derived series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub step: u64,
    pub value: f64,
}

/// One post-peak window of the decline table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeclineRow {
    /// Nominal window start (peak_step + 1 + i·stride).
    pub start_step: u64,
    /// Last step covered: the nominal end, or the final trace step for the
    /// truncated last window.
    pub end_step: u64,
    /// Alignment points the slope was fitted on.
    pub points: usize,
    /// Negated OLS slope, scaled to per-1000-steps. Negative values mean
    /// the alignment rose inside the window.
    pub decline_per_1000: f64,
    /// True for the final truncated window (rendered "→ end" in CSV).
    pub to_end: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionResult {
    pub onset_step: Option<u64>,
    pub peak_step: u64,
    pub decline_table: Vec<DeclineRow>,
    /// Present only when a baseline trace was supplied.
    pub lar_differential: Option<Vec<SeriesPoint>>,
    pub gen_gap: Vec<SeriesPoint>,
}

// ───────────────────────────── onset ───────────────────────────────

fn validation_series(trace: &[TraceRow]) -> Vec<(u64, f64)> {
    trace.iter().filter_map(|r| r.val_loss.map(|v| (r.step, v))).collect()
}

/// First evaluation step where the trailing `window_evals`-mean validation
/// loss is at least `(1 + rel_threshold)` times the minimum validation loss
/// seen before the window. `None` when the rule never fires.
pub fn detect_onset(
    trace: &[TraceRow],
    cfg: &DetectorConfig,
) -> Result<Option<u64>, DetectorError> {
    let cfg = cfg.clone().validated()?;
    let vals = validation_series(trace);
    let w = cfg.window_evals;
    if vals.len() < w {
        return Err(DetectorError::TooFewValidationPoints { required: w, found: vals.len() });
    }
    let mut prior_min = f64::INFINITY;
    for j in w..vals.len() {
        // vals[j - w] drops out of the window this iteration; fold it into
        // the prefix minimum.
        prior_min = prior_min.min(vals[j - w].1);
        let mean: f64 = vals[j + 1 - w..=j].iter().map(|&(_, v)| v).sum::<f64>() / w as f64;
        if mean >= prior_min * (1.0 + cfg.rel_threshold) {
            return Ok(Some(vals[j].0));
        }
    }
    Ok(None)
}

// ───────────────────────────── differential ────────────────────────

/// Baseline alignment minus this run's, at every step where both traces
/// carry a finite value.
pub fn lar_differential(
    run: &[TraceRow],
    baseline: &[TraceRow],
) -> Result<Vec<SeriesPoint>, DetectorError> {
    let base: BTreeMap<u64, f64> = baseline
        .iter()
        .filter_map(|r| r.lar.filter(|v| v.is_finite()).map(|v| (r.step, v)))
        .collect();
    let series: Vec<SeriesPoint> = run
        .iter()
        .filter_map(|r| {
            let run_lar = r.lar.filter(|v| v.is_finite())?;
            let base_lar = base.get(&r.step)?;
            Some(SeriesPoint { step: r.step, value: base_lar - run_lar })
        })
        .collect();
    if series.is_empty() {
        return Err(DetectorError::NoCommonSteps);
    }
    Ok(series)
}

// ───────────────────────────── generalization gap ──────────────────

/// Centered moving average with symmetric edge truncation: position i
/// averages over `i ± min(half, i, len−1−i)`. Symmetry keeps the average of
/// linear data exact even at the edges.
fn smooth_centered(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let len = values.len();
    (0..len)
        .map(|i| {
            let h = half.min(i).min(len - 1 - i);
            let slice = &values[i - h..=i + h];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// Validation loss minus smoothed training loss, at every step carrying
/// both. Steps with validation loss but no training loss are skipped.
pub fn generalization_gap(
    trace: &[TraceRow],
    cfg: &DetectorConfig,
) -> Result<Vec<SeriesPoint>, DetectorError> {
    let cfg = cfg.clone().validated()?;
    let train: Vec<(u64, f64)> =
        trace.iter().filter_map(|r| r.train_loss.map(|v| (r.step, v))).collect();
    if train.is_empty() {
        return Err(DetectorError::MissingColumn { column: "train_loss" });
    }
    if trace.iter().all(|r| r.val_loss.is_none()) {
        return Err(DetectorError::MissingColumn { column: "val_loss" });
    }
    let smoothed_vals = smooth_centered(
        &train.iter().map(|&(_, v)| v).collect::<Vec<_>>(),
        cfg.smooth_window_steps,
    );
    let smoothed: BTreeMap<u64, f64> =
        train.iter().map(|&(s, _)| s).zip(smoothed_vals).collect();
    Ok(trace
        .iter()
        .filter_map(|r| {
            let val = r.val_loss?;
            let train_at = smoothed.get(&r.step)?;
            Some(SeriesPoint { step: r.step, value: val - train_at })
        })
        .collect())
}

// ───────────────────────────── decline table ───────────────────────

fn alignment_series(trace: &[TraceRow]) -> Vec<(u64, f64)> {
    trace
        .iter()
        .filter_map(|r| r.lar.filter(|v| v.is_finite()).map(|v| (r.step, v)))
        .collect()
}

/// Step of the maximum finite alignment value, earliest on ties.
pub fn peak_step(trace: &[TraceRow]) -> Result<u64, DetectorError> {
    let mut best: Option<(u64, f64)> = None;
    for (step, lar) in alignment_series(trace) {
        match best {
            Some((_, top)) if lar <= top => {}
            _ => best = Some((step, lar)),
        }
    }
    best.map(|(s, _)| s).ok_or(DetectorError::NoFiniteAlignment)
}

/// Centered-formulation least-squares slope of value against step.
fn ols_slope(points: &[(u64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xm: f64 = points.iter().map(|&(s, _)| s as f64).sum::<f64>() / n;
    let ym: f64 = points.iter().map(|&(_, v)| v).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(s, v) in points {
        let dx = s as f64 - xm;
        num += dx * (v - ym);
        den += dx * dx;
    }
    num / den
}

/// Fits the post-peak decline in consecutive `decline_window_steps`-step
/// windows anchored at `peak + 1`. Windows with fewer than two alignment
/// points yield no row (no slope to fit).
pub fn decline_table(
    trace: &[TraceRow],
    cfg: &DetectorConfig,
) -> Result<Vec<DeclineRow>, DetectorError> {
    let cfg = cfg.clone().validated()?;
    let peak = peak_step(trace)?;
    let series = alignment_series(trace);
    let post: Vec<(u64, f64)> = series.iter().copied().filter(|&(s, _)| s > peak).collect();
    if post.len() < 2 {
        return Err(DetectorError::InsufficientDeclinePoints { found: post.len() });
    }
    let last_step = post.last().expect("nonempty checked above").0;
    let stride = cfg.decline_window_steps;

    let mut rows = Vec::new();
    let mut start = peak + 1;
    while start <= last_step {
        let nominal_end = start + stride - 1;
        let truncated = nominal_end >= last_step;
        let end = if truncated { last_step } else { nominal_end };
        let in_window: Vec<(u64, f64)> =
            post.iter().copied().filter(|&(s, _)| s >= start && s <= nominal_end).collect();
        if in_window.len() >= 2 {
            rows.push(DeclineRow {
                start_step: start,
                end_step: end,
                points: in_window.len(),
                decline_per_1000: -ols_slope(&in_window) * 1000.0,
                to_end: truncated && nominal_end > last_step,
            });
        }
        if truncated {
            break;
        }
        start = nominal_end + 1;
    }
    Ok(rows)
}

/// Renders the decline table in the same layout as the JSON rows; the final
/// truncated window's end cell reads "→ end".
pub fn write_decline_csv<W: Write>(mut out: W, rows: &[DeclineRow]) -> Result<(), DetectorError> {
    writeln!(out, "window_start,window_end,points,decline_per_1000")?;
    for row in rows {
        let end = if row.to_end { "→ end".to_string() } else { row.end_step.to_string() };
        writeln!(out, "{},{},{},{}", row.start_step, end, row.points, row.decline_per_1000)?;
    }
    Ok(())
}

// ───────────────────────────── composition ─────────────────────────

/// Runs every diagnostic over one trace: onset, peak, decline windows, the
/// generalization gap, and (when a baseline is given) the LAR differential.
pub fn detect(
    trace: &[TraceRow],
    baseline: Option<&[TraceRow]>,
    cfg: &DetectorConfig,
) -> Result<DetectionResult, DetectorError> {
    let onset_step = detect_onset(trace, cfg)?;
    let peak = peak_step(trace)?;
    let table = decline_table(trace, cfg)?;
    let gap = generalization_gap(trace, cfg)?;
    let differential = match baseline {
        Some(base) => Some(lar_differential(trace, base)?),
        None => None,
    };
    Ok(DetectionResult {
        onset_step,
        peak_step: peak,
        decline_table: table,
        lar_differential: differential,
        gen_gap: gap,
    })
}
