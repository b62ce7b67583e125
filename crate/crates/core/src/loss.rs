//! Losses, the affine loss/tolerance rescaling and contextual calibration.
//!
//! The ICL loss compares the safe predictor against the zero-shot prediction
//! and takes values in `{-1, 0, 1}`. It is kept as a small integer until a
//! risk is formed, so every risk is a ratio of exact integer counts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cascade::{
    predict_safe_icl, ExampleRecord, ExitPolicy, ExitView, ProbVector, Threshold,
};
use crate::error::{Error, Result};

/// Floor applied to content-free probabilities before dividing by them.
pub const CALIBRATION_FLOOR: f64 = 1e-6;

/// How the signed ICL loss is mapped into `[0, 1]` for testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Affine map of `[a, b]` onto `[0, 1]`, applied to loss and tolerance alike.
    Scaled,
    /// Negative losses set to zero.
    Clipped,
}

impl LossMode {
    pub const ALL: [LossMode; 2] = [LossMode::Scaled, LossMode::Clipped];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Scaled => "scaled",
            LossMode::Clipped => "clipped",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled" => Ok(LossMode::Scaled),
            "clipped" => Ok(LossMode::Clipped),
            other => Err(Error::Config(format!(
                "unknown loss mode '{other}' (expected scaled or clipped)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    mode: LossMode,
    lower: f64,
    upper: f64,
}

impl LossSpec {
    pub fn new(mode: LossMode, lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::Config(format!(
                "loss bounds [{lower}, {upper}] need lower < upper"
            )));
        }
        if mode == LossMode::Clipped && upper <= 0.0 {
            return Err(Error::Config(format!(
                "clipped loss needs a positive upper bound, got {upper}"
            )));
        }
        Ok(LossSpec { mode, lower, upper })
    }

    /// Bounds `(-1, 1)` of the classification ICL loss.
    pub fn classification(mode: LossMode) -> Self {
        LossSpec {
            mode,
            lower: -1.0,
            upper: 1.0,
        }
    }

    pub fn mode(&self) -> LossMode {
        self.mode
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Open interval a tolerance must fall in for this mode.
    pub fn epsilon_range(&self) -> (f64, f64) {
        match self.mode {
            LossMode::Scaled => (self.lower, self.upper),
            LossMode::Clipped => (self.lower.max(0.0), self.upper),
        }
    }
}

/// Tolerance `epsilon`, failure probability `delta`, and the tolerance
/// carried into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskBudget {
    epsilon: f64,
    delta: f64,
    epsilon_scaled: f64,
}

impl RiskBudget {
    pub fn new(epsilon: f64, delta: f64, spec: &LossSpec) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Delta(delta));
        }
        let (lo, hi) = spec.epsilon_range();
        if !(epsilon > lo && epsilon < hi) {
            return Err(Error::Budget {
                epsilon,
                lower: lo,
                upper: hi,
            });
        }
        Ok(RiskBudget {
            epsilon,
            delta,
            epsilon_scaled: scale_epsilon(epsilon, spec)?,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn epsilon_scaled(&self) -> f64 {
        self.epsilon_scaled
    }

    /// Level in `[0, 1]` the mode's normalized risk is tested against.
    pub fn test_level(&self, spec: &LossSpec) -> f64 {
        match spec.mode {
            LossMode::Scaled => self.epsilon_scaled,
            LossMode::Clipped => self.epsilon / spec.upper,
        }
    }
}

pub fn base_loss(prediction: usize, truth: usize) -> u8 {
    (prediction != truth) as u8
}

/// Signed ICL loss: safe-predictor 0-1 loss minus zero-shot 0-1 loss.
pub fn icl_loss(record: &ExampleRecord, policy: &ExitPolicy) -> Result<i8> {
    let truth = record.true_label();
    let safe = base_loss(predict_safe_icl(record, policy)?, truth) as i8;
    let zero_shot = base_loss(record.zero_shot_prediction(), truth) as i8;
    Ok(safe - zero_shot)
}

pub fn clip_loss(v: f64) -> f64 {
    v.max(0.0)
}

pub fn scale_loss(v: f64, spec: &LossSpec) -> Result<f64> {
    if !(v >= spec.lower && v <= spec.upper) {
        return Err(Error::LossBound {
            value: v,
            lower: spec.lower,
            upper: spec.upper,
        });
    }
    Ok(affine(v, spec))
}

fn affine(v: f64, spec: &LossSpec) -> f64 {
    (v - spec.lower) / (spec.upper - spec.lower)
}

pub fn scale_epsilon(epsilon: f64, spec: &LossSpec) -> Result<f64> {
    if !(epsilon > spec.lower && epsilon < spec.upper) {
        return Err(Error::Budget {
            epsilon,
            lower: spec.lower,
            upper: spec.upper,
        });
    }
    Ok(affine(epsilon, spec))
}

/// Divide by the content-free distribution (floored) and renormalize.
pub fn contextual_calibrate(p: &ProbVector, content_free: &ProbVector) -> ProbVector {
    assert_eq!(
        p.num_classes(),
        content_free.num_classes(),
        "calibration needs matching class counts"
    );
    let weighted: Vec<f64> = p
        .as_slice()
        .iter()
        .zip(content_free.as_slice())
        .map(|(&pk, &ck)| pk / ck.max(CALIBRATION_FLOOR))
        .collect();
    let total: f64 = weighted.iter().sum();
    ProbVector::new(weighted.into_iter().map(|w| w / total).collect())
        .expect("renormalized calibration output is a distribution")
}

/// Tally of ICL losses over a record set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LossCounts {
    pub helpful: usize,
    pub neutral: usize,
    pub harmful: usize,
}

impl LossCounts {
    pub fn push(&mut self, loss: i8) {
        match loss {
            -1 => self.helpful += 1,
            0 => self.neutral += 1,
            1 => self.harmful += 1,
            other => panic!("ICL loss {other} outside {{-1, 0, 1}}"),
        }
    }

    pub fn from_losses(losses: impl IntoIterator<Item = i8>) -> Self {
        let mut counts = LossCounts::default();
        losses.into_iter().for_each(|l| counts.push(l));
        counts
    }

    pub fn total(&self) -> usize {
        self.helpful + self.neutral + self.harmful
    }

    /// Sum of the signed losses.
    pub fn sum(&self) -> i64 {
        self.harmful as i64 - self.helpful as i64
    }

    /// Mean signed ICL loss.
    pub fn raw_risk(&self) -> f64 {
        self.sum() as f64 / self.total() as f64
    }

    pub fn clipped_risk(&self) -> f64 {
        self.harmful as f64 / self.total() as f64
    }

    /// Mean of `(v - a) / (b - a)`, computed by the same floating-point map
    /// as [`scale_epsilon`] so budget comparisons agree across scales.
    pub fn scaled_risk(&self, spec: &LossSpec) -> f64 {
        affine(self.raw_risk(), spec)
    }

    /// Risk in `[0, 1]` the mode tests: scaled risk, or clipped risk over `b`.
    pub fn normalized_risk(&self, spec: &LossSpec) -> f64 {
        match spec.mode {
            LossMode::Scaled => self.scaled_risk(spec),
            LossMode::Clipped => self.clipped_risk() / spec.upper,
        }
    }

    /// Mean of the mode-selected loss on its own scale.
    pub fn mode_risk(&self, spec: &LossSpec) -> f64 {
        match spec.mode {
            LossMode::Scaled => self.scaled_risk(spec),
            LossMode::Clipped => self.clipped_risk(),
        }
    }
}

pub fn loss_counts(records: &[ExampleRecord], policy: &ExitPolicy) -> Result<LossCounts> {
    let mut counts = LossCounts::default();
    for r in records {
        counts.push(icl_loss(r, policy)?);
    }
    Ok(counts)
}

pub(crate) fn view_counts(views: &[ExitView], threshold: Threshold) -> LossCounts {
    LossCounts::from_losses(views.iter().map(|v| v.icl_loss(threshold)))
}

/// Mean of the mode-selected loss: `scale_loss(icl_loss)` when scaled,
/// `clip_loss(icl_loss)` when clipped.
pub fn empirical_risk(
    records: &[ExampleRecord],
    policy: &ExitPolicy,
    spec: &LossSpec,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("empirical risk over an empty record set"));
    }
    for r in records {
        let v = icl_loss(r, policy)? as f64;
        if v < spec.lower || v > spec.upper {
            return Err(Error::LossBound {
                value: v,
                lower: spec.lower,
                upper: spec.upper,
            });
        }
    }
    Ok(loss_counts(records, policy)?.mode_risk(spec))
}

/// Mean raw ICL loss.
pub fn empirical_icl_risk(records: &[ExampleRecord], policy: &ExitPolicy) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("empirical risk over an empty record set"));
    }
    Ok(loss_counts(records, policy)?.raw_risk())
}
