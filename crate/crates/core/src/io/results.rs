//! Selection, evaluation, curve and report files.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cascade::{ConfidenceMeasure, ExitPolicy, Threshold};
use crate::error::{Error, Result};
use crate::harness::{efficiency_report, TrialReport, CLASS_CONDITIONAL_CAVEAT};
use crate::loss::{LossMode, LossSpec};
use crate::risk::{Certification, Selection};

pub const SELECTION_FORMAT_VERSION: u32 = 1;

/// A calibrated threshold together with everything needed to reproduce
/// and apply it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionFile {
    pub format_version: u32,
    pub lambda_hat: Threshold,
    pub mode: LossMode,
    pub epsilon: f64,
    pub delta: f64,
    pub loss_lower: f64,
    pub loss_upper: f64,
    /// Level the p-values test against, on the `[0, 1]` scale.
    pub test_level: f64,
    pub confidence: ConfidenceMeasure,
    pub first_exit_layer: usize,
    pub grid_points: usize,
    pub calibration_records: usize,
    /// Digest of the calibration data, see [`crate::io::data_digest`].
    pub calibration_data: String,
    pub trail: Vec<Certification>,
}

impl SelectionFile {
    pub fn policy(&self) -> Result<ExitPolicy> {
        ExitPolicy::new(self.lambda_hat, self.first_exit_layer, self.confidence)
    }

    pub fn spec(&self) -> Result<LossSpec> {
        LossSpec::new(self.mode, self.loss_lower, self.loss_upper)
    }

    pub fn selection(&self) -> Selection {
        Selection {
            lambda_hat: self.lambda_hat,
            trail: self.trail.clone(),
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("result types serialize");
    s.push('\n');
    s
}

pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    fs::write(&path, to_json(value)).map_err(|e| Error::io(&path, e))
}

pub fn load_selection(path: impl AsRef<Path>) -> Result<SelectionFile> {
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let s: SelectionFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("selection file: {e}"),
    })?;
    if s.format_version != SELECTION_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "selection format_version {} is not supported (expected {SELECTION_FORMAT_VERSION})",
            s.format_version
        )));
    }
    s.policy()?;
    s.spec()?;
    Ok(s)
}

/// One value of a risk curve: `(epsilon, mode, statistic) -> value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epsilon: f64,
    pub mode: LossMode,
    pub statistic: String,
    pub value: f64,
}

/// Statistics written per (epsilon, mode), in file order. Undefined
/// values are written as `NaN` so every statistic has the same row count.
pub const CURVE_STATISTICS: [&str; 11] = [
    "mean_test_risk",
    "std_error",
    "mean_lambda_hat",
    "sentinel_rate",
    "mean_layers",
    "mean_layers_with_fallback",
    "relative_savings",
    "relative_savings_with_fallback",
    "correct_risk",
    "incorrect_risk",
    "violation_rate",
];

/// Flatten a report to curve rows, statistic-major.
pub fn curve_rows(report: &TrialReport) -> Vec<CurveRow> {
    let efficiency = efficiency_report(report).ok();
    let savings = |eps: f64, mode: LossMode, fallback: bool| -> f64 {
        let Some(rows) = &efficiency else {
            return f64::NAN;
        };
        let row = rows
            .iter()
            .find(|r| r.epsilon == eps)
            .expect("one row per epsilon");
        let s = if fallback {
            row.savings_with_fallback
        } else {
            row.savings
        };
        match mode {
            LossMode::Scaled => s.unwrap_or(f64::NAN),
            LossMode::Clipped => 0.0,
        }
    };
    let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let mut rows = Vec::new();
    for stat in CURVE_STATISTICS {
        for c in &report.cells {
            let value = match stat {
                "mean_test_risk" => c.mean_test_risk,
                "std_error" => c.std_error,
                "mean_lambda_hat" => opt(c.mean_lambda_hat),
                "sentinel_rate" => c.sentinel_rate,
                "mean_layers" => c.mean_layers,
                "mean_layers_with_fallback" => c.mean_layers_with_fallback,
                "relative_savings" => savings(c.epsilon, c.mode, false),
                "relative_savings_with_fallback" => savings(c.epsilon, c.mode, true),
                "correct_risk" => opt(c.correct_risk),
                "incorrect_risk" => opt(c.incorrect_risk),
                "violation_rate" => opt(c.violation_rate),
                _ => unreachable!(),
            };
            rows.push(CurveRow {
                epsilon: c.epsilon,
                mode: c.mode,
                statistic: stat.to_string(),
                value,
            });
        }
    }
    rows
}

pub fn write_curves<W: Write>(rows: &[CurveRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Protocol(format!("writing curves: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("<curves>", e))
}

pub fn save_curves(rows: &[CurveRow], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_curves(rows, &mut buf)?;
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))
}

pub fn read_curves<R: Read>(input: R) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["epsilon", "mode", "statistic", "value"] {
        return Err(Error::Parse {
            line: 1,
            message: "expected header epsilon,mode,statistic,value".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, row) in r.deserialize::<CurveRow>().enumerate() {
        rows.push(row.map_err(|e| Error::Parse {
            line: i + 2,
            message: format!("malformed curve row: {e}"),
        })?);
    }
    if rows.is_empty() {
        return Err(Error::Empty("curve file has no rows"));
    }
    Ok(rows)
}

pub fn load_curves(path: impl AsRef<Path>) -> Result<Vec<CurveRow>> {
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    read_curves(file)
}

/// Curve values indexed by (epsilon, mode) in first-seen order.
struct CurveTable {
    keys: Vec<(f64, LossMode)>,
    rows: Vec<CurveRow>,
}

impl CurveTable {
    fn new(rows: &[CurveRow]) -> Self {
        let mut keys: Vec<(f64, LossMode)> = Vec::new();
        for r in rows {
            if !keys.contains(&(r.epsilon, r.mode)) {
                keys.push((r.epsilon, r.mode));
            }
        }
        CurveTable {
            keys,
            rows: rows.to_vec(),
        }
    }

    fn get(&self, eps: f64, mode: LossMode, stat: &str) -> f64 {
        self.rows
            .iter()
            .find(|r| r.epsilon == eps && r.mode == mode && r.statistic == stat)
            .map_or(f64::NAN, |r| r.value)
    }

    fn epsilons(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &(e, _) in &self.keys {
            if !out.contains(&e) {
                out.push(e);
            }
        }
        out
    }
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.6}")
    }
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Protocol(format!("writing {}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Protocol(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write `risk.csv`, `efficiency.csv`, `class_conditional.csv` and
/// `summary.md` into `dir`, returning the paths written.
pub fn write_report_dir(rows: &[CurveRow], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let t = CurveTable::new(rows);
    let mut written = Vec::new();
    let mut md = String::from("# Risk-controlled early exit: sweep report\n\n");

    let risk_path = dir.join("risk.csv");
    let mut risk = Vec::new();
    md.push_str("## Test risk\n\n| epsilon | mode | mean test risk | std error | mean + 2 SE | within budget |\n|---|---|---|---|---|---|\n");
    for &(eps, mode) in &t.keys {
        let m = t.get(eps, mode, "mean_test_risk");
        let se = t.get(eps, mode, "std_error");
        let upper = m + 2.0 * se;
        let ok = if m.is_nan() {
            "NaN".to_string()
        } else {
            (m <= eps + 2.0 * se).to_string()
        };
        md.push_str(&format!(
            "| {eps} | {mode} | {} | {} | {} | {ok} |\n",
            fmt(m),
            fmt(se),
            fmt(upper)
        ));
        risk.push(vec![
            eps.to_string(),
            mode.to_string(),
            fmt(m),
            fmt(se),
            fmt(upper),
            ok,
        ]);
    }
    write_csv(
        &risk_path,
        &[
            "epsilon",
            "mode",
            "mean_test_risk",
            "std_error",
            "mean_plus_2se",
            "within_budget",
        ],
        risk,
    )?;
    written.push(risk_path);

    let eff_path = dir.join("efficiency.csv");
    let mut eff = Vec::new();
    md.push_str("\n## Layers evaluated\n\n| epsilon | scaled | clipped | savings | scaled (with fallback) | clipped (with fallback) | savings (with fallback) |\n|---|---|---|---|---|---|---|\n");
    for eps in t.epsilons() {
        let cells = [
            t.get(eps, LossMode::Scaled, "mean_layers"),
            t.get(eps, LossMode::Clipped, "mean_layers"),
            t.get(eps, LossMode::Scaled, "relative_savings"),
            t.get(eps, LossMode::Scaled, "mean_layers_with_fallback"),
            t.get(eps, LossMode::Clipped, "mean_layers_with_fallback"),
            t.get(eps, LossMode::Scaled, "relative_savings_with_fallback"),
        ]
        .map(fmt);
        md.push_str(&format!("| {eps} | {} |\n", cells.join(" | ")));
        eff.push(std::iter::once(eps.to_string()).chain(cells).collect());
    }
    write_csv(
        &eff_path,
        &[
            "epsilon",
            "scaled_layers",
            "clipped_layers",
            "savings",
            "scaled_layers_with_fallback",
            "clipped_layers_with_fallback",
            "savings_with_fallback",
        ],
        eff,
    )?;
    written.push(eff_path);

    let cc_path = dir.join("class_conditional.csv");
    let mut cc = Vec::new();
    md.push_str("\n## Risk by context kind\n\n| epsilon | mode | correct | incorrect |\n|---|---|---|---|\n");
    for &(eps, mode) in &t.keys {
        let c = fmt(t.get(eps, mode, "correct_risk"));
        let i = fmt(t.get(eps, mode, "incorrect_risk"));
        md.push_str(&format!("| {eps} | {mode} | {c} | {i} |\n"));
        cc.push(vec![eps.to_string(), mode.to_string(), c, i]);
    }
    md.push_str(&format!("\nNote: {CLASS_CONDITIONAL_CAVEAT}.\n"));
    write_csv(
        &cc_path,
        &["epsilon", "mode", "correct_risk", "incorrect_risk"],
        cc,
    )?;
    written.push(cc_path);

    let md_path = dir.join("summary.md");
    fs::write(&md_path, md).map_err(|e| Error::io(&md_path, e))?;
    written.push(md_path);
    Ok(written)
}
