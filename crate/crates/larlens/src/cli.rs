//! The `larlens` command line: analysis, tracing, detection, fixture
//! generation, experiments, and report rendering.
//!
//! Exit codes: 0 on success, 1 on a domain error (bad data, dimension
//! mismatch, divergence, I/O), 2 on a usage error (unknown flag or
//! subcommand, unparseable value — handled by the argument parser).
//!
//! The `grok` and `detect` subcommands also accept `--config PATH`
//! pointing at a JSON file with the same field names as their config
//! structs; explicit command-line flags win over config-file values.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};

use crate::detector::{self, DetectorConfig};
use crate::grokkit::{self, TaskId, TaskSpec, TrainConfig};
use crate::lar;
use crate::synth::{self, FixtureKind, FixtureSpec};
use crate::tensorio::{self, TraceRow};

#[derive(Parser)]
#[command(
    name = "larlens",
    version,
    about = "Spectral alignment diagnostics for training runs",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the full alignment report of a weight matrix against a
    /// batch of activations.
    Analyze(AnalyzeArgs),
    /// Rebuild trace.csv rows from saved checkpoint matrices.
    Trace(TraceArgs),
    /// Run the overfitting/decline detector over a trace.
    Detect(DetectArgs),
    /// Train a small transformer on a binary-operation task.
    Grok(GrokArgs),
    /// Generate a synthetic fixture with analytically known answers.
    Synth(SynthArgs),
    /// Render a finished run into plot-ready CSV files.
    Report(ReportArgs),
}

/// Parses the command line and runs the chosen subcommand. Usage errors
/// exit with code 2 before this returns; domain errors come back as
/// `Err` for the binary to report with exit code 1.
pub fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Trace(args) => cmd_trace(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Grok(args) => cmd_grok(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Report(args) => cmd_report(args),
    }
}

// ─────────────────────────────── analyze ───────────────────────────

#[derive(Args)]
struct AnalyzeArgs {
    /// Weight matrix (m×n) as an NPY file.
    #[arg(long, value_name = "PATH")]
    weights: PathBuf,
    /// Activation batch (b×n) as an NPY file.
    #[arg(long, value_name = "PATH")]
    activations: PathBuf,
    /// Comma-separated split points for the L_k/Δ_k decomposition
    /// (default: 1,2,3,5,10 clipped to the rank).
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Write the JSON report here instead of standard output.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let w = tensorio::load_npy(&args.weights)
        .with_context(|| format!("reading weights from {}", args.weights.display()))?;
    let x = tensorio::load_npy(&args.activations)
        .with_context(|| format!("reading activations from {}", args.activations.display()))?;
    let report = lar::analyze(&w, &x, args.ks.as_deref())?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => fs::write(path, json + "\n")
            .with_context(|| format!("writing report to {}", path.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

// ─────────────────────────────── trace ─────────────────────────────

#[derive(Args)]
struct TraceArgs {
    /// Run directory: either the experiment layout (with a checkpoints/
    /// subdirectory) or a directory of step-indexed NPY pairs.
    #[arg(long, value_name = "PATH")]
    run_dir: PathBuf,
}

/// One step's pair of matrix files.
struct CheckpointFiles {
    step: u64,
    weights: PathBuf,
    activations: PathBuf,
}

/// Scans a directory for `step-N.<role>.npy` pairs. The weight matrix is
/// `step-N.unembed.npy` or `step-N.weights.npy`; the activations are
/// `step-N.unembed-inputs.npy` or `step-N.activations.npy`.
fn scan_checkpoints(dir: &Path) -> Result<Vec<CheckpointFiles>> {
    let mut by_step: std::collections::BTreeMap<u64, (Option<PathBuf>, Option<PathBuf>)> =
        std::collections::BTreeMap::new();
    for entry in
        fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?
    {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(rest) = name.strip_prefix("step-") else { continue };
        let Some(rest) = rest.strip_suffix(".npy") else { continue };
        let Some((num, role)) = rest.split_once('.') else { continue };
        let Ok(step) = num.parse::<u64>() else { continue };
        let slot = by_step.entry(step).or_default();
        match role {
            "unembed" | "weights" => slot.0 = Some(path),
            "unembed-inputs" | "activations" => slot.1 = Some(path),
            _ => {}
        }
    }
    let mut out = Vec::with_capacity(by_step.len());
    for (step, (w, a)) in by_step {
        let weights =
            w.ok_or_else(|| anyhow!("checkpoint step {step} has no weight matrix file"))?;
        let activations =
            a.ok_or_else(|| anyhow!("checkpoint step {step} has no activations file"))?;
        out.push(CheckpointFiles { step, weights, activations });
    }
    if out.is_empty() {
        bail!("no step-N.*.npy checkpoint pairs found in {}", dir.display());
    }
    Ok(out)
}

fn cmd_trace(args: TraceArgs) -> Result<()> {
    let ckpt_dir = if args.run_dir.join("checkpoints").is_dir() {
        args.run_dir.join("checkpoints")
    } else {
        args.run_dir.clone()
    };
    let checkpoints = scan_checkpoints(&ckpt_dir)?;

    // Start from the existing trace (if any) so logged loss/accuracy
    // columns survive; checkpoint steps get their spectral columns
    // recomputed, other rows pass through untouched.
    let trace_path = args.run_dir.join("trace.csv");
    let mut rows: std::collections::BTreeMap<u64, TraceRow> = if trace_path.is_file() {
        tensorio::load_trace(&trace_path)
            .with_context(|| format!("reading existing {}", trace_path.display()))?
            .into_iter()
            .map(|r| (r.step, r))
            .collect()
    } else {
        std::collections::BTreeMap::new()
    };

    for ck in &checkpoints {
        let w = tensorio::load_npy(&ck.weights)
            .with_context(|| format!("reading {}", ck.weights.display()))?;
        let x = tensorio::load_npy(&ck.activations)
            .with_context(|| format!("reading {}", ck.activations.display()))?;
        let report = lar::analyze(&w, &x, None)?;
        let row = rows.entry(ck.step).or_insert_with(|| TraceRow::new(ck.step));
        grokkit::fill_row_from_report(row, &report);
    }

    let ordered: Vec<TraceRow> = rows.into_values().collect();
    tensorio::save_trace(&trace_path, &ordered)
        .with_context(|| format!("writing {}", trace_path.display()))?;
    println!(
        "{}: {} rows ({} checkpoints)",
        trace_path.display(),
        ordered.len(),
        checkpoints.len()
    );
    Ok(())
}

// ─────────────────────────────── detect ────────────────────────────

#[derive(Args)]
struct DetectArgs {
    /// Trace CSV of the run to analyze.
    #[arg(long, value_name = "PATH")]
    trace: PathBuf,
    /// Baseline trace for the alignment differential.
    #[arg(long, value_name = "PATH")]
    baseline: Option<PathBuf>,
    /// Onset window length in evaluations.
    #[arg(long, value_name = "N")]
    window: Option<usize>,
    /// Relative rise over the validation-loss minimum that counts as
    /// onset.
    #[arg(long, value_name = "FRACTION")]
    threshold: Option<f64>,
    /// Centered moving-average width (trace entries) for the
    /// generalization gap.
    #[arg(long, value_name = "N")]
    smooth_window: Option<usize>,
    /// Post-peak decline window stride in steps.
    #[arg(long, value_name = "STEPS")]
    decline_window: Option<u64>,
    /// JSON file with DetectorConfig fields; explicit flags win.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Write the JSON result here instead of standard output.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Also write the decline table as CSV here.
    #[arg(long, value_name = "PATH")]
    decline_csv: Option<PathBuf>,
}

fn load_config_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing config file {}", path.display()))
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let mut cfg: DetectorConfig = match &args.config {
        Some(path) => load_config_json(path)?,
        None => DetectorConfig::default(),
    };
    if let Some(w) = args.window {
        cfg.window_evals = w;
    }
    if let Some(t) = args.threshold {
        cfg.rel_threshold = t;
    }
    if let Some(s) = args.smooth_window {
        cfg.smooth_window_steps = s;
    }
    if let Some(d) = args.decline_window {
        cfg.decline_window_steps = d;
    }

    let trace = tensorio::load_trace(&args.trace)
        .with_context(|| format!("reading trace {}", args.trace.display()))?;
    let baseline = match &args.baseline {
        Some(path) => Some(
            tensorio::load_trace(path)
                .with_context(|| format!("reading baseline {}", path.display()))?,
        ),
        None => None,
    };
    let result = detector::detect(&trace, baseline.as_deref(), &cfg)?;

    if let Some(path) = &args.decline_csv {
        let mut buf = Vec::new();
        detector::write_decline_csv(&mut buf, &result.decline_table)?;
        fs::write(path, buf)
            .with_context(|| format!("writing decline table to {}", path.display()))?;
    }
    let json = serde_json::to_string_pretty(&result)?;
    match &args.out {
        Some(path) => fs::write(path, json + "\n")
            .with_context(|| format!("writing result to {}", path.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

// ─────────────────────────────── grok ──────────────────────────────

fn task_name_parser() -> PossibleValuesParser {
    PossibleValuesParser::new(TaskId::ALL.iter().map(|t| t.name()))
}

#[derive(Args)]
struct GrokArgs {
    /// Operation to train on.
    #[arg(long, value_name = "NAME", value_parser = task_name_parser())]
    task: String,
    /// Modulus: a prime for modular tasks, 120 for the S₅ tasks.
    #[arg(long, value_name = "P")]
    prime: u64,
    /// Train fraction in (0, 1).
    #[arg(long, value_name = "F")]
    fraction: f64,
    /// Random seed (initialization, split, and shuffling).
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Base profile: the reference configuration or the reduced CI one.
    #[arg(long, value_name = "NAME", default_value = "paper",
          value_parser = PossibleValuesParser::new(["paper", "ci"]))]
    profile: String,
    /// JSON file with TrainConfig fields, overriding the profile;
    /// explicit flags win over both.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run directory to create.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
    #[arg(long, value_name = "N")]
    max_epochs: Option<u64>,
    #[arg(long, value_name = "N")]
    post_grok_epochs: Option<u64>,
    #[arg(long, value_name = "N")]
    eval_every_epochs: Option<u64>,
    #[arg(long, value_name = "RATE")]
    lr: Option<f64>,
    #[arg(long, value_name = "LAMBDA")]
    weight_decay: Option<f64>,
}

fn cmd_grok(args: GrokArgs) -> Result<()> {
    let profile = match args.profile.as_str() {
        "ci" => TrainConfig::ci(),
        _ => TrainConfig::paper(),
    };
    // Config file over profile: overlay only the keys the file names.
    let mut cfg = match &args.config {
        Some(path) => {
            let mut base = serde_json::to_value(&profile)?;
            let overlay: serde_json::Value = load_config_json(path)?;
            let (serde_json::Value::Object(base_map), serde_json::Value::Object(over)) =
                (&mut base, overlay)
            else {
                bail!("config file {} must be a JSON object", path.display());
            };
            for (key, value) in over {
                if !base_map.contains_key(&key) {
                    bail!("config file {} has unknown field {key:?}", path.display());
                }
                base_map.insert(key, value);
            }
            serde_json::from_value(base)?
        }
        None => profile,
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(m) = args.max_epochs {
        cfg.max_epochs = m;
    }
    if let Some(pg) = args.post_grok_epochs {
        cfg.post_grok_epochs = pg;
    }
    if let Some(e) = args.eval_every_epochs {
        cfg.eval_every_epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if let Some(wd) = args.weight_decay {
        cfg.weight_decay = wd;
    }

    let task_id = TaskId::from_str(&args.task).map_err(|e| anyhow!(e))?;
    let task = TaskSpec::new(task_id, args.prime, args.fraction)?;
    let run = grokkit::run_experiment_to_dir(&task, &cfg, &args.out)?;
    println!(
        "{}: {} epochs, {} steps, memorized {:?}, grokked {:?}, final lar {:.4}",
        args.out.display(),
        run.result.epochs_run,
        run.result.steps_run,
        run.result.memorized_at,
        run.result.grokked_at,
        run.result.final_metrics.lar,
    );
    Ok(())
}

// ─────────────────────────────── synth ─────────────────────────────

fn fixture_kind_parser() -> PossibleValuesParser {
    PossibleValuesParser::new(FixtureKind::ALL.iter().map(|k| k.name()))
}

#[derive(Args)]
struct SynthArgs {
    /// Fixture family to generate.
    #[arg(long, value_name = "NAME", value_parser = fixture_kind_parser())]
    kind: String,
    /// Inner dimension (columns of W and X).
    #[arg(long, value_name = "N")]
    n: usize,
    /// Rows of the weight matrix.
    #[arg(long, value_name = "M")]
    m: usize,
    /// Rows of the activation batch.
    #[arg(long, value_name = "B")]
    batch: usize,
    /// Concentration parameter for the rank-k families.
    #[arg(long, value_name = "K")]
    k: Option<usize>,
    /// Spike amplitude ratios for the spiked-spectrum family.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    spike_ratios: Option<Vec<f64>>,
    #[arg(long, value_name = "S", default_value_t = 0)]
    seed: u64,
    /// Directory for weights.npy, activations.npy, and expected.json.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let kind = FixtureKind::from_str(&args.kind).map_err(|e| anyhow!(e))?;
    let spec = FixtureSpec {
        kind,
        n: args.n,
        m: args.m,
        batch_size: args.batch,
        k: args.k,
        seed: args.seed,
        spike_ratios: args.spike_ratios.clone(),
    };
    let fixture = synth::make_fixture(&spec)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    tensorio::save_npy(args.out.join("weights.npy"), &fixture.w)?;
    tensorio::save_npy(args.out.join("activations.npy"), &fixture.x)?;
    let sidecar = serde_json::json!({ "spec": spec, "expected": fixture.expected });
    fs::write(args.out.join("expected.json"), format!("{:#}\n", sidecar))?;
    println!(
        "{}: weights {}×{}, activations {}×{}",
        args.out.display(),
        fixture.w.rows(),
        fixture.w.cols(),
        fixture.x.rows(),
        fixture.x.cols()
    );
    Ok(())
}

// ─────────────────────────────── report ────────────────────────────

#[derive(Args)]
struct ReportArgs {
    /// Finished run directory (trace.csv, result.json).
    #[arg(long, value_name = "PATH")]
    run_dir: PathBuf,
    /// Output directory for the CSV files (default: the run directory).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let trace = tensorio::load_trace(args.run_dir.join("trace.csv"))
        .with_context(|| format!("reading trace in {}", args.run_dir.display()))?;
    if trace.is_empty() {
        bail!("trace in {} has no rows", args.run_dir.display());
    }
    let out_dir = args.out.clone().unwrap_or_else(|| args.run_dir.clone());
    fs::create_dir_all(&out_dir)?;

    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let lar_rows: Vec<String> = trace
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.step,
                r.epoch.map(|e| e.to_string()).unwrap_or_default(),
                fmt(r.lar),
                fmt(r.train_acc),
                fmt(r.val_acc),
                fmt(r.val_loss),
            )
        })
        .collect();
    write_csv(
        &out_dir.join("lar_vs_epoch.csv"),
        "step,epoch,lar,train_acc,val_acc,val_loss",
        &lar_rows,
    )?;

    let scatter_rows: Vec<String> = trace
        .iter()
        .filter(|r| r.k_pred.is_some() && r.k95.is_some())
        .map(|r| {
            format!(
                "{},{},{},{}",
                r.step,
                r.epoch.map(|e| e.to_string()).unwrap_or_default(),
                r.k_pred.unwrap(),
                r.k95.unwrap(),
            )
        })
        .collect();
    write_csv(&out_dir.join("kpred_vs_k95.csv"), "step,epoch,k_pred,k95", &scatter_rows)?;

    // Markers come from result.json when present; a trace-only directory
    // still renders the curves.
    let result_path = args.run_dir.join("result.json");
    let mut marker_rows = Vec::new();
    if result_path.is_file() {
        let result: grokkit::RunResult = serde_json::from_str(
            &fs::read_to_string(&result_path)
                .with_context(|| format!("reading {}", result_path.display()))?,
        )?;
        if let Some(epoch) = result.memorized_at {
            marker_rows.push(format!("memorized,{epoch}"));
        }
        if let Some(epoch) = result.grokked_at {
            marker_rows.push(format!("grokked,{epoch}"));
        }
    }
    write_csv(&out_dir.join("markers.csv"), "event,epoch", &marker_rows)?;

    println!(
        "{}: lar_vs_epoch.csv ({} rows), kpred_vs_k95.csv ({} rows), markers.csv ({} rows)",
        out_dir.display(),
        lar_rows.len(),
        scatter_rows.len(),
        marker_rows.len()
    );
    Ok(())
}
