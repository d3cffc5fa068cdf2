//! A desk-scale grokking laboratory: small decoder-only transformers
//! trained on binary-operation tasks with decoupled-weight-decay Adam,
//! logging alignment diagnostics as they memorize and (sometimes) grok.
//!
//! The pieces: [`tasks`] enumerates the twelve operations and builds
//! deterministic train/validation splits; [`model`] is the transformer
//! with hand-derived backprop; [`adam`] is the optimizer. This module
//! ties them into [`run_experiment`]: every `eval_every_epochs` epochs
//! (and at the last epoch) it logs train/val loss and accuracy plus the
//! full [`AlignmentReport`] of the unembedding matrix against the
//! unembedding inputs — the final-layer-norm outputs at the answer
//! position — over the *entire* train set. A run ends at `max_epochs` or
//! `post_grok_epochs` after grokking is first observed.
//!
//! Flags: a run has *memorized* once train accuracy exceeds 0.99 while
//! validation accuracy is below 0.50, and *grokked* once both exceed
//! 0.99; each epoch is recorded the first time its condition is seen.
//!
//! Everything is `f64`, single-threaded, and bit-deterministic: the same
//! seed and config reproduce the metric trace exactly.

pub mod adam;
pub mod model;
pub mod tasks;

use std::fmt;
use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lar::{self, AlignmentReport, LarError};
use crate::matrix::DenseMatrix;
use crate::tensorio::{self, TensorIoError, TraceRow};

pub use adam::{AdamState, AdamW, ADAM_EPSILON};
pub use model::{argmax_rows, Arch, ForwardOutput, Model, ParamSet};
pub use tasks::{build_dataset, Example, TaskId, TaskSpec, SEQ_LEN};

/// Examples per forward chunk during evaluation and gradient
/// accumulation; bounds peak memory without changing any result bit
/// (chunk sums recombine exactly).
const FORWARD_CHUNK: usize = 512;

/// One metric row per evaluation epoch.
pub type MetricTrace = Vec<TraceRow>;

// ─────────────────────────────── errors ────────────────────────────

#[derive(Debug)]
pub enum GrokError {
    /// The task specification is malformed (bad modulus, fraction, …).
    InvalidTask { detail: String },
    /// The training configuration is malformed.
    InvalidConfig { detail: String },
    /// A token id at or beyond the vocabulary size reached the model.
    TokenOutOfRange { token: u32, vocab: usize },
    /// A forward pass was asked for zero sequences.
    EmptyBatch,
    /// Training produced a non-finite loss.
    Divergence { epoch: u64, step: u64 },
    /// The alignment analysis of a checkpoint failed.
    Analysis(LarError),
    /// Reading or writing trace/tensor files failed.
    Trace(TensorIoError),
    /// Plain filesystem failure.
    Io(std::io::Error),
    /// JSON (de)serialization failure.
    Json(serde_json::Error),
}

impl fmt::Display for GrokError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrokError::InvalidTask { detail } => write!(f, "invalid task: {detail}"),
            GrokError::InvalidConfig { detail } => write!(f, "invalid config: {detail}"),
            GrokError::TokenOutOfRange { token, vocab } => {
                write!(f, "token {token} out of range for vocabulary of {vocab}")
            }
            GrokError::EmptyBatch => write!(f, "empty batch"),
            GrokError::Divergence { epoch, step } => {
                write!(f, "training diverged (non-finite loss) at epoch {epoch}, step {step}")
            }
            GrokError::Analysis(e) => write!(f, "alignment analysis failed: {e}"),
            GrokError::Trace(e) => write!(f, "trace I/O failed: {e}"),
            GrokError::Io(e) => write!(f, "I/O failed: {e}"),
            GrokError::Json(e) => write!(f, "JSON failed: {e}"),
        }
    }
}

impl std::error::Error for GrokError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            GrokError::Analysis(e) => Some(e),
            GrokError::Trace(e) => Some(e),
            GrokError::Io(e) => Some(e),
            GrokError::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<LarError> for GrokError {
    fn from(e: LarError) -> Self {
        GrokError::Analysis(e)
    }
}

impl From<TensorIoError> for GrokError {
    fn from(e: TensorIoError) -> Self {
        GrokError::Trace(e)
    }
}

impl From<std::io::Error> for GrokError {
    fn from(e: std::io::Error) -> Self {
        GrokError::Io(e)
    }
}

impl From<serde_json::Error> for GrokError {
    fn from(e: serde_json::Error) -> Self {
        GrokError::Json(e)
    }
}

// ─────────────────────────────── config ────────────────────────────

/// Full training configuration. Defaults are the reference profile used
/// for the headline experiments; [`TrainConfig::ci`] is a reduced profile
/// sized for fast continuous-integration runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub max_epochs: u64,
    pub post_grok_epochs: u64,
    pub eval_every_epochs: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embed_dim: 128,
            ff_dim: 512,
            heads: 4,
            layers: 2,
            lr: 1e-3,
            weight_decay: 1.0,
            beta1: 0.9,
            beta2: 0.98,
            batch_size: 512,
            warmup_steps: 10,
            max_epochs: 50_000,
            post_grok_epochs: 2_000,
            eval_every_epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The reference profile (the defaults).
    pub fn paper() -> TrainConfig {
        TrainConfig::default()
    }

    /// Reduced profile for continuous integration, sized for modulus 23
    /// at train fraction 0.5 (264 training equations). Empirically
    /// validated to grok well inside the profile's epoch budget; see the
    /// acceptance tests.
    pub fn ci() -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            max_epochs: 4_000,
            post_grok_epochs: 100,
            eval_every_epochs: 10,
            ..TrainConfig::default()
        }
    }

    pub fn arch(&self, vocab: usize) -> Arch {
        Arch {
            vocab,
            embed: self.embed_dim,
            ff: self.ff_dim,
            heads: self.heads,
            layers: self.layers,
        }
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            warmup_steps: self.warmup_steps,
        }
    }

    pub fn validated(self) -> Result<TrainConfig, GrokError> {
        let bad = |detail: String| Err(GrokError::InvalidConfig { detail });
        if self.embed_dim == 0
            || self.ff_dim == 0
            || self.heads == 0
            || self.layers == 0
            || self.batch_size == 0
        {
            return bad("architecture and batch dimensions must be positive".into());
        }
        if self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed dim {} must be divisible by {} heads",
                self.embed_dim, self.heads
            ));
        }
        if self.warmup_steps == 0 || self.max_epochs == 0 || self.post_grok_epochs == 0
            || self.eval_every_epochs == 0
        {
            return bad("schedule lengths must be positive".into());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay > 0.0) {
            return bad(format!("weight decay must be positive, got {}", self.weight_decay));
        }
        self.optimizer().validate()?;
        Ok(self)
    }
}

// ─────────────────────────────── run state ─────────────────────────

/// Everything a training run carries between epochs.
pub struct RunState {
    pub task: TaskSpec,
    pub cfg: TrainConfig,
    pub model: Model,
    pub opt: AdamW,
    pub opt_state: AdamState,
    /// Epochs completed so far.
    pub epoch: u64,
    /// Optimizer steps completed so far.
    pub step: u64,
    pub trace: MetricTrace,
    pub memorized_at: Option<u64>,
    pub grokked_at: Option<u64>,
    train: Vec<Example>,
    val: Vec<Example>,
    shuffle_rng: ChaCha8Rng,
}

/// Everything one evaluation pass produces.
pub struct EvalRecord {
    pub row: TraceRow,
    pub report: AlignmentReport,
    /// Final-layer-norm outputs at the answer position over the whole
    /// train set (train_size × embed) — the inputs to the unembedding.
    pub unembed_inputs: DenseMatrix,
}

struct SplitEval {
    loss: f64,
    accuracy: f64,
    unembed_inputs: Option<DenseMatrix>,
}

impl RunState {
    pub fn new(task: &TaskSpec, cfg: &TrainConfig) -> Result<RunState, GrokError> {
        let cfg = cfg.clone().validated()?;
        task.validate()?;
        let (train, val) = build_dataset(task, cfg.seed)?;

        // Seed-derived random streams: 0 initializes parameters, 1 is the
        // dataset split (inside build_dataset), 2 drives epoch shuffles.
        // Streams are independent, so e.g. changing the batch size never
        // touches the initial weights.
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        init_rng.set_stream(0);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(2);

        let model = Model::init(cfg.arch(task.vocab()), &mut init_rng)?;
        let opt = cfg.optimizer();
        let opt_state = AdamState::new(&model.params);
        Ok(RunState {
            task: task.clone(),
            cfg,
            model,
            opt,
            opt_state,
            epoch: 0,
            step: 0,
            trace: Vec::new(),
            memorized_at: None,
            grokked_at: None,
            train,
            val,
            shuffle_rng,
        })
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn val_len(&self) -> usize {
        self.val.len()
    }

    /// One full pass over the train set in freshly shuffled batches of
    /// `batch_size` (last batch possibly smaller), with one optimizer
    /// step per batch.
    pub fn train_epoch(&mut self) -> Result<(), GrokError> {
        self.epoch += 1;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);

        let bs = self.cfg.batch_size.min(self.train.len());
        let mut tokens = Vec::with_capacity(bs);
        let mut targets = Vec::with_capacity(bs);
        for batch in order.chunks(bs) {
            tokens.clear();
            targets.clear();
            for &i in batch {
                tokens.push(self.train[i].tokens);
                targets.push(self.train[i].target);
            }
            self.step += 1;
            let (loss, grads) = self.model.loss_and_gradients(&tokens, &targets)?;
            if !loss.is_finite() {
                return Err(GrokError::Divergence { epoch: self.epoch, step: self.step });
            }
            self.opt_state.step(&self.opt, &mut self.model.params, &grads);
        }
        Ok(())
    }

    /// Forward-only loss/accuracy over one example set, in fixed-size
    /// chunks; optionally stacks the unembedding inputs row by row.
    fn eval_split(&self, examples: &[Example], collect: bool) -> Result<SplitEval, GrokError> {
        assert!(!examples.is_empty(), "dataset splits are never empty");
        let embed = self.model.arch.embed;
        let mut acts = collect.then(|| DenseMatrix::zeros(examples.len(), embed));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut tokens = Vec::with_capacity(FORWARD_CHUNK.min(examples.len()));
        let mut targets = Vec::with_capacity(FORWARD_CHUNK.min(examples.len()));
        for (ci, chunk) in examples.chunks(FORWARD_CHUNK).enumerate() {
            tokens.clear();
            targets.clear();
            for ex in chunk {
                tokens.push(ex.tokens);
                targets.push(ex.target);
            }
            let out = self.model.forward(&tokens)?;
            for (bi, &target) in targets.iter().enumerate() {
                let row = out.logits.row(bi);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
                loss_sum += denom.ln() - (row[target as usize] - max);
            }
            for (bi, &pred) in argmax_rows(&out.logits).iter().enumerate() {
                if pred == targets[bi] {
                    correct += 1;
                }
            }
            if let Some(acts) = acts.as_mut() {
                let base = ci * FORWARD_CHUNK;
                for bi in 0..chunk.len() {
                    acts.row_mut(base + bi).copy_from_slice(out.unembed_inputs.row(bi));
                }
            }
        }
        Ok(SplitEval {
            loss: loss_sum / examples.len() as f64,
            accuracy: correct as f64 / examples.len() as f64,
            unembed_inputs: acts,
        })
    }

    /// Full evaluation: train/val loss and accuracy plus the alignment
    /// report of the unembedding against the whole-train-set unembedding
    /// inputs. Does not advance training and does not update flags.
    pub fn evaluate(&self) -> Result<EvalRecord, GrokError> {
        let train = self.eval_split(&self.train, true)?;
        let val = self.eval_split(&self.val, false)?;
        let acts = train.unembed_inputs.expect("train split was evaluated with collect=true");
        let report = lar::analyze(&self.model.params.unembed, &acts, None)?;

        let mut row = TraceRow::new(self.step);
        row.epoch = Some(self.epoch);
        row.train_loss = Some(train.loss);
        row.val_loss = Some(val.loss);
        row.train_acc = Some(train.accuracy);
        row.val_acc = Some(val.accuracy);
        fill_row_from_report(&mut row, &report);
        Ok(EvalRecord { row, report, unembed_inputs: acts })
    }

    /// Alignment of the unembedding against the train-set unembedding
    /// inputs, skipping the validation pass (used by the dense
    /// epoch-by-epoch sweeps).
    pub fn train_alignment(&self) -> Result<f64, GrokError> {
        let train = self.eval_split(&self.train, true)?;
        let acts = train.unembed_inputs.expect("train split was evaluated with collect=true");
        let report = lar::analyze(&self.model.params.unembed, &acts, Some(&[1]))?;
        Ok(report.lar_rms.value())
    }

    /// First-observation flag updates from one evaluation's accuracies.
    pub fn update_flags(&mut self, train_acc: f64, val_acc: f64) {
        update_flags(&mut self.memorized_at, &mut self.grokked_at, self.epoch, train_acc, val_acc);
    }
}

/// Memorized = train accuracy > 0.99 with validation accuracy < 0.50;
/// grokked = both > 0.99. Each records the epoch it is first observed.
pub(crate) fn update_flags(
    memorized_at: &mut Option<u64>,
    grokked_at: &mut Option<u64>,
    epoch: u64,
    train_acc: f64,
    val_acc: f64,
) {
    if memorized_at.is_none() && train_acc > 0.99 && val_acc < 0.50 {
        *memorized_at = Some(epoch);
    }
    if grokked_at.is_none() && train_acc > 0.99 && val_acc > 0.99 {
        *grokked_at = Some(epoch);
    }
}

/// Copies a report's spectral summary into the matching trace columns.
pub fn fill_row_from_report(row: &mut TraceRow, report: &AlignmentReport) {
    row.lar = Some(report.lar_rms.value());
    row.p1 = Some(report.p1);
    row.q1 = Some(report.q1);
    row.sigma_p = Some(report.stats.sigma_p);
    row.sigma_q = Some(report.stats.sigma_q);
    row.corr_pq = report.stats.pearson;
    row.spearman_pq = report.stats.spearman;
    row.srank = Some(report.stable_rank);
    row.erank = Some(report.effective_rank);
    row.k95 = report.k95.map(|k| k as f64);
    row.k_pred = report.k_pred;
}

// ─────────────────────────────── experiments ───────────────────────

/// Train/validation metrics at the final evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lar: f64,
}

/// The summary written to `result.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub task: TaskSpec,
    pub memorized_at: Option<u64>,
    pub grokked_at: Option<u64>,
    pub epochs_run: u64,
    pub steps_run: u64,
    pub final_metrics: FinalMetrics,
    pub final_report: AlignmentReport,
}

/// A saved pair of matrices at a notable moment of the run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub label: String,
    pub epoch: u64,
    pub step: u64,
    pub unembed: DenseMatrix,
    pub unembed_inputs: DenseMatrix,
}

/// Everything [`run_experiment`] produces.
#[derive(Debug, Clone)]
pub struct CompletedRun {
    pub trace: MetricTrace,
    pub result: RunResult,
    /// Saved at initialization, first memorization, first grokking, and
    /// the end of the run (an event landing on an already-saved step
    /// extends its label instead of duplicating it).
    pub checkpoints: Vec<Checkpoint>,
}

impl CompletedRun {
    /// The logged alignment value at an evaluation epoch, if that epoch
    /// was evaluated and the value was finite.
    pub fn lar_at_epoch(&self, epoch: u64) -> Option<f64> {
        self.trace.iter().find(|r| r.epoch == Some(epoch)).and_then(|r| r.lar)
    }
}

fn push_checkpoint(checkpoints: &mut Vec<Checkpoint>, label: &str, state: &RunState, eval: &EvalRecord) {
    if let Some(last) = checkpoints.last_mut() {
        if last.step == state.step {
            last.label = format!("{}+{}", last.label, label);
            return;
        }
    }
    checkpoints.push(Checkpoint {
        label: label.to_string(),
        epoch: state.epoch,
        step: state.step,
        unembed: state.model.params.unembed.clone(),
        unembed_inputs: eval.unembed_inputs.clone(),
    });
}

/// Trains `task` under `cfg` to completion: evaluates at epoch 0, then
/// after every `eval_every_epochs`-th epoch and at the final epoch. The
/// run ends at `max_epochs` or `post_grok_epochs` after grokking was
/// first observed, whichever comes first.
pub fn run_experiment(task: &TaskSpec, cfg: &TrainConfig) -> Result<CompletedRun, GrokError> {
    let mut state = RunState::new(task, cfg)?;
    let mut checkpoints = Vec::new();

    let mut eval = state.evaluate()?;
    state.trace.push(eval.row.clone());
    state.update_flags(
        eval.row.train_acc.expect("evaluation always fills accuracy"),
        eval.row.val_acc.expect("evaluation always fills accuracy"),
    );
    push_checkpoint(&mut checkpoints, "init", &state, &eval);

    loop {
        state.train_epoch()?;
        let deadline_hit = state
            .grokked_at
            .map_or(false, |g| state.epoch >= g + state.cfg.post_grok_epochs);
        let is_last = state.epoch >= state.cfg.max_epochs || deadline_hit;
        if state.epoch % state.cfg.eval_every_epochs == 0 || is_last {
            eval = state.evaluate()?;
            state.trace.push(eval.row.clone());
            let before_mem = state.memorized_at;
            let before_grok = state.grokked_at;
            state.update_flags(
                eval.row.train_acc.expect("evaluation always fills accuracy"),
                eval.row.val_acc.expect("evaluation always fills accuracy"),
            );
            if before_mem.is_none() && state.memorized_at.is_some() {
                push_checkpoint(&mut checkpoints, "memorized", &state, &eval);
            }
            if before_grok.is_none() && state.grokked_at.is_some() {
                push_checkpoint(&mut checkpoints, "grokked", &state, &eval);
            }
        }
        if is_last {
            break;
        }
    }
    push_checkpoint(&mut checkpoints, "final", &state, &eval);

    let final_row = state.trace.last().expect("at least the epoch-0 evaluation is logged");
    let result = RunResult {
        task: state.task.clone(),
        memorized_at: state.memorized_at,
        grokked_at: state.grokked_at,
        epochs_run: state.epoch,
        steps_run: state.step,
        final_metrics: FinalMetrics {
            train_loss: final_row.train_loss.expect("evaluation always fills loss"),
            val_loss: final_row.val_loss.expect("evaluation always fills loss"),
            train_acc: final_row.train_acc.expect("evaluation always fills accuracy"),
            val_acc: final_row.val_acc.expect("evaluation always fills accuracy"),
            lar: final_row.lar.expect("evaluation always fills alignment"),
        },
        final_report: eval.report,
    };
    Ok(CompletedRun { trace: state.trace, result, checkpoints })
}

/// [`run_experiment`] plus the on-disk layout: `config.json` (task and
/// training config), `trace.csv`, `checkpoints/step-N.<name>.npy`, and
/// `result.json`.
pub fn run_experiment_to_dir(
    task: &TaskSpec,
    cfg: &TrainConfig,
    dir: &Path,
) -> Result<CompletedRun, GrokError> {
    fs::create_dir_all(dir)?;
    let config_json = serde_json::json!({ "task": task, "train": cfg });
    fs::write(dir.join("config.json"), format!("{:#}\n", config_json))?;

    let run = run_experiment(task, cfg)?;

    tensorio::save_trace(dir.join("trace.csv"), &run.trace)?;
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    for ck in &run.checkpoints {
        let stem = format!("step-{}", ck.step);
        tensorio::save_npy(ckpt_dir.join(format!("{stem}.unembed.npy")), &ck.unembed)?;
        tensorio::save_npy(
            ckpt_dir.join(format!("{stem}.unembed-inputs.npy")),
            &ck.unembed_inputs,
        )?;
    }
    let result_json = serde_json::to_string_pretty(&run.result)?;
    fs::write(dir.join("result.json"), result_json + "\n")?;
    Ok(run)
}

// ─────────────────────────────── batch-dip sweep ───────────────────

/// One row of [`batch_dip_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipRow {
    pub modulus: u64,
    pub train_fraction: f64,
    /// Effective batch size (requested size clamped to the train set).
    pub batch_size: usize,
    /// Effective batch size over train-set size, in (0, 1].
    pub batch_ratio: f64,
    /// Minimum unembedding alignment observed after each of the first
    /// 10 training epochs (the initialization value is not included).
    pub min_lar_first_10: f64,
    /// Maximum alignment seen at any later evaluation (the sweep stops a
    /// run early once this clears 0.51, or at `max_epochs`).
    pub max_lar_later: f64,
}

/// Measures the early alignment dip across batch sizes on modular
/// addition: for every (modulus, fraction, batch) combination, trains a
/// fresh model, records the minimum whole-train-set alignment over the
/// first 10 epochs, then keeps training (evaluating every
/// `eval_every_epochs`) until the alignment recovers above 0.51 or
/// `max_epochs` is reached. Batch entries larger than the train set mean
/// full-batch (`usize::MAX` is a convenient spelling).
pub fn batch_dip_sweep(
    moduli: &[u64],
    fractions: &[f64],
    batches: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<DipRow>, GrokError> {
    let mut rows = Vec::new();
    for &p in moduli {
        for &fraction in fractions {
            for &batch in batches {
                let task = TaskSpec::new(TaskId::Add, p, fraction)?;
                let mut run_cfg = cfg.clone();
                run_cfg.batch_size = batch.min(usize::MAX - 1).max(1);
                let mut state = RunState::new(&task, &run_cfg)?;
                let train_len = state.train_len();
                let effective = run_cfg.batch_size.min(train_len);

                let mut min_first = f64::INFINITY;
                let mut max_later = f64::NEG_INFINITY;
                loop {
                    state.train_epoch()?;
                    if state.epoch <= 10 {
                        let lar = state.train_alignment()?;
                        if lar < min_first {
                            min_first = lar;
                        }
                    } else if state.epoch % state.cfg.eval_every_epochs == 0 {
                        let lar = state.train_alignment()?;
                        if lar > max_later {
                            max_later = lar;
                        }
                        if max_later > 0.51 {
                            break;
                        }
                    }
                    if state.epoch >= state.cfg.max_epochs {
                        break;
                    }
                }
                rows.push(DipRow {
                    modulus: p,
                    train_fraction: fraction,
                    batch_size: effective,
                    batch_ratio: effective as f64 / train_len as f64,
                    min_lar_first_10: min_first,
                    max_lar_later: max_later,
                });
            }
        }
    }
    Ok(rows)
}

// ─────────────────────────────── tests ─────────────────────────────
