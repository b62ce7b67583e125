//! Command-line front end.
//!
//! Exit status is 0 on success, 1 when input or configuration fails
//! validation, and 2 when the command line itself is malformed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::cascade::{ConfidenceMeasure, ExitPolicy};
use crate::error::{Error, Result};
use crate::harness::{evaluate_policy, run_trials, Evaluation, TrialConfig, TrialSource};
use crate::io::{self, SelectionFile, SELECTION_FORMAT_VERSION};
use crate::loss::{LossMode, LossSpec, RiskBudget};
use crate::risk::{ltt_select, LambdaGrid};
use crate::sim::{simulate_dataset, NoiseModel, SimProfile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const PRODUCER: &str = concat!("icl-guard ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(
    name = "icl-guard",
    version,
    about = "Risk-controlled early exit for in-context learning cascades"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic trace file from a simulator profile.
    Simulate(SimulateArgs),
    /// Select a threshold on calibration traces.
    Calibrate(CalibrateArgs),
    /// Apply a selection to traces and report risk, accuracy and cost.
    Evaluate(EvaluateArgs),
    /// Repeated calibration/test trials over a tolerance grid.
    Sweep(SweepArgs),
    /// Turn a curve file into summary tables.
    Report(ReportArgs),
    /// Write the default simulator profile.
    Profile(ProfileArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Profile file; the built-in default when omitted.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value = "scaled")]
    loss: LossMode,
    #[arg(long, default_value = "argmax")]
    confidence: ConfidenceMeasure,
    /// Defaults to half the trace depth.
    #[arg(long)]
    first_exit_layer: Option<usize>,
    /// Number of evenly spaced thresholds in [0, 1].
    #[arg(long, default_value_t = LambdaGrid::DEFAULT_POINTS)]
    grid: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    selection: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// A profile (TOML) or a trace file (JSON lines).
    #[arg(long)]
    profile_or_data: PathBuf,
    /// Comma-separated tolerances.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.15,0.2,0.25")]
    epsilons: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Calibration fraction of each split.
    #[arg(long, default_value_t = 0.5)]
    split: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, value_delimiter = ',', default_value = "scaled,clipped")]
    modes: Vec<LossMode>,
    #[arg(long, default_value = "argmax")]
    confidence: ConfidenceMeasure,
    #[arg(long)]
    first_exit_layer: Option<usize>,
    #[arg(long, default_value_t = LambdaGrid::DEFAULT_POINTS)]
    grid: usize,
    /// Records drawn per trial from a profile.
    #[arg(long, default_value_t = 4000)]
    records_per_trial: usize,
    /// Override the profile's share of correct demonstrations.
    #[arg(long)]
    mix: Option<f64>,
    /// Also write the full per-trial report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    curves: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// Use the enumerable noise model.
    #[arg(long)]
    discrete: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct EvaluationFile {
    data_records: usize,
    data: String,
    mode: LossMode,
    epsilon: f64,
    delta: f64,
    confidence: ConfidenceMeasure,
    first_exit_layer: usize,
    evaluation: Evaluation,
}

/// Whether a path holds trace records rather than a profile: by extension
/// first, then by whether the first non-blank character opens a JSON object.
fn is_trace_file(path: &Path) -> Result<bool> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl" | "json") => return Ok(true),
        Some("toml") => return Ok(false),
        _ => {}
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.trim_start().starts_with('{'))
}

fn simulate(a: SimulateArgs) -> Result<String> {
    let profile = match &a.profile {
        Some(p) => SimProfile::load(p)?,
        None => SimProfile::default(),
    };
    let records = simulate_dataset(&profile, a.n, a.seed)?;
    io::save_records(
        &records,
        &a.out,
        &format!("{PRODUCER} profile {}", profile.fingerprint()),
    )?;
    Ok(format!(
        "wrote {} records to {}",
        records.len(),
        a.out.display()
    ))
}

fn calibrate(a: CalibrateArgs) -> Result<String> {
    let records = io::load_records(&a.data)?;
    let spec = LossSpec::classification(a.loss);
    let budget = RiskBudget::new(a.epsilon, a.delta, &spec)?;
    let first_exit = a
        .first_exit_layer
        .unwrap_or((records[0].num_layers() / 2).max(1));
    let template = ExitPolicy::lambda(1.0, first_exit, a.confidence)?;
    let grid = LambdaGrid::evenly_spaced(a.grid)?;
    let selection = ltt_select(&records, &grid, &budget, &spec, &template)?;
    let file = SelectionFile {
        format_version: SELECTION_FORMAT_VERSION,
        lambda_hat: selection.lambda_hat,
        mode: a.loss,
        epsilon: a.epsilon,
        delta: a.delta,
        loss_lower: spec.lower(),
        loss_upper: spec.upper(),
        test_level: budget.test_level(&spec),
        confidence: a.confidence,
        first_exit_layer: first_exit,
        grid_points: a.grid,
        calibration_records: records.len(),
        calibration_data: io::data_digest(&records),
        trail: selection.trail,
    };
    io::save_json(&file, &a.out)?;
    Ok(format!(
        "lambda_hat = {} ({} of {} candidates certified)",
        file.lambda_hat,
        file.trail.iter().take_while(|c| c.certified).count(),
        file.trail.len()
    ))
}

fn evaluate(a: EvaluateArgs) -> Result<String> {
    let records = io::load_records(&a.data)?;
    let selection = io::load_selection(&a.selection)?;
    let policy = selection.policy()?;
    let evaluation = evaluate_policy(&records, &policy)?;
    let summary = format!(
        "risk {:.4}, accuracy {:.4} (zero-shot {:.4}), mean layers {:.2}",
        evaluation.raw_risk,
        evaluation.accuracy,
        evaluation.zero_shot_accuracy,
        evaluation.mean_layers
    );
    let file = EvaluationFile {
        data_records: records.len(),
        data: io::data_digest(&records),
        mode: selection.mode,
        epsilon: selection.epsilon,
        delta: selection.delta,
        confidence: selection.confidence,
        first_exit_layer: selection.first_exit_layer,
        evaluation,
    };
    io::save_json(&file, &a.out)?;
    Ok(summary)
}

fn sweep(a: SweepArgs) -> Result<String> {
    let config = TrialConfig {
        num_trials: a.trials,
        calibration_fraction: a.split,
        epsilons: a.epsilons,
        delta: a.delta,
        modes: a.modes,
        confidence: a.confidence,
        first_exit_layer: a.first_exit_layer,
        grid_points: a.grid,
        records_per_trial: a.records_per_trial,
        seed: a.seed,
    };
    let report = if is_trace_file(&a.profile_or_data)? {
        if a.mix.is_some() {
            return Err(Error::Config(
                "--mix applies to profiles, not trace files".into(),
            ));
        }
        let records = io::load_records(&a.profile_or_data)?;
        run_trials(TrialSource::Records(&records), &config)?
    } else {
        let mut profile = SimProfile::load(&a.profile_or_data)?;
        if let Some(m) = a.mix {
            profile = profile.with_mix(m);
        }
        run_trials(TrialSource::Profile(&profile), &config)?
    };
    let rows = io::curve_rows(&report);
    io::save_curves(&rows, &a.out)?;
    if let Some(path) = &a.report {
        io::save_json(&report, path)?;
    }
    Ok(format!(
        "wrote {} curve rows to {}",
        rows.len(),
        a.out.display()
    ))
}

fn report(a: ReportArgs) -> Result<String> {
    let rows = io::load_curves(&a.curves)?;
    let files = io::write_report_dir(&rows, &a.out)?;
    Ok(format!(
        "wrote {} tables to {}",
        files.len(),
        a.out.display()
    ))
}

fn profile(a: ProfileArgs) -> Result<String> {
    let mut p = SimProfile::default();
    if a.discrete {
        p.noise_model = NoiseModel::Discrete;
    }
    p.save(&a.out)?;
    Ok(format!(
        "wrote profile {} to {}",
        p.fingerprint(),
        a.out.display()
    ))
}

fn dispatch(command: Command) -> Result<String> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
        Command::Profile(a) => profile(a),
    }
}

/// Parse `argv` (program name first), run the command and return the exit
/// status. Messages go to stdout on success and stderr otherwise.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(msg) => {
            println!("{msg}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_VALIDATION
        }
    }
}
