//! Per-layer prediction traces and the early-exit predictors.
//!
//! Layers are numbered from 1 to `L`; class labels are 0-based indices
//! into a probability vector. A record carries the demonstration-conditioned
//! trace together with the zero-shot final distribution used as the safe
//! fallback.

use std::borrow::Cow;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::contextual_calibrate;

/// Absolute tolerance on the sum of a probability vector.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// A categorical distribution over `K >= 2` class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidProbVector(format!(
                "need at least 2 classes, got {}",
                entries.len()
            )));
        }
        if let Some((k, v)) = entries
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidProbVector(format!(
                "entry {k} is {v}, expected a finite non-negative value"
            )));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidProbVector(format!(
                "entries sum to {sum}, expected 1 within {PROB_SUM_TOLERANCE}"
            )));
        }
        Ok(ProbVector(entries))
    }

    pub fn uniform(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidProbVector(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        Ok(ProbVector(vec![1.0 / num_classes as f64; num_classes]))
    }

    /// Softmax of unnormalized log-scores.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::InvalidProbVector("non-finite score".into()));
        }
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        ProbVector::new(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = k;
            }
        }
        best
    }
}

/// How a layer's distribution is turned into a confidence score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceMeasure {
    /// Largest class probability.
    #[default]
    Argmax,
    /// Gap between the two largest class probabilities.
    Top2,
    /// One minus the entropy normalized by `ln K`.
    Entropy,
}

impl ConfidenceMeasure {
    pub const ALL: [ConfidenceMeasure; 3] = [
        ConfidenceMeasure::Argmax,
        ConfidenceMeasure::Top2,
        ConfidenceMeasure::Entropy,
    ];

    pub fn score(self, p: &ProbVector) -> f64 {
        match self {
            ConfidenceMeasure::Argmax => confidence_argmax(p),
            ConfidenceMeasure::Top2 => confidence_top2(p),
            ConfidenceMeasure::Entropy => confidence_entropy(p),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConfidenceMeasure::Argmax => "argmax",
            ConfidenceMeasure::Top2 => "top2",
            ConfidenceMeasure::Entropy => "entropy",
        }
    }
}

impl fmt::Display for ConfidenceMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ConfidenceMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(ConfidenceMeasure::Argmax),
            "top2" => Ok(ConfidenceMeasure::Top2),
            "entropy" => Ok(ConfidenceMeasure::Entropy),
            other => Err(Error::Config(format!(
                "unknown confidence measure '{other}' (expected argmax, top2 or entropy)"
            ))),
        }
    }
}

pub fn confidence_argmax(p: &ProbVector) -> f64 {
    p.as_slice().iter().copied().fold(0.0, f64::max)
}

pub fn confidence_top2(p: &ProbVector) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in p.as_slice() {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    (first - second).clamp(0.0, 1.0)
}

pub fn confidence_entropy(p: &ProbVector) -> f64 {
    let entropy: f64 = p
        .as_slice()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum();
    (1.0 - entropy / (p.num_classes() as f64).ln()).clamp(0.0, 1.0)
}

/// Per-layer distributions `p_1, ..., p_L` for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace(Vec<ProbVector>);

impl LayerTrace {
    pub fn new(per_layer: Vec<ProbVector>) -> Result<Self> {
        if per_layer.len() < 2 {
            return Err(Error::Shape(format!(
                "a trace needs at least 2 layers, got {}",
                per_layer.len()
            )));
        }
        let k = per_layer[0].num_classes();
        if let Some((l, p)) = per_layer
            .iter()
            .enumerate()
            .find(|(_, p)| p.num_classes() != k)
        {
            return Err(Error::Shape(format!(
                "layer {} has {} classes, layer 1 has {k}",
                l + 1,
                p.num_classes()
            )));
        }
        Ok(LayerTrace(per_layer))
    }

    pub fn num_layers(&self) -> usize {
        self.0.len()
    }

    pub fn num_classes(&self) -> usize {
        self.0[0].num_classes()
    }

    /// Distribution at 1-based `layer`.
    pub fn layer(&self, layer: usize) -> &ProbVector {
        &self.0[layer - 1]
    }

    pub fn layers(&self) -> &[ProbVector] {
        &self.0
    }

    pub fn last(&self) -> &ProbVector {
        &self.0[self.0.len() - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextKind {
    Correct,
    Incorrect,
}

impl ContextKind {
    pub fn name(self) -> &'static str {
        match self {
            ContextKind::Correct => "correct",
            ContextKind::Incorrect => "incorrect",
        }
    }
}

/// One calibration unit: the demonstration-conditioned trace of an input,
/// its zero-shot final distribution and its true label.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleRecord {
    id: String,
    dataset: String,
    context_kind: ContextKind,
    true_label: usize,
    icl_trace: LayerTrace,
    zero_shot_final: ProbVector,
    content_free_icl_trace: Option<LayerTrace>,
    content_free_zero_shot: Option<ProbVector>,
}

impl ExampleRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        dataset: impl Into<String>,
        context_kind: ContextKind,
        true_label: usize,
        icl_trace: LayerTrace,
        zero_shot_final: ProbVector,
        content_free_icl_trace: Option<LayerTrace>,
        content_free_zero_shot: Option<ProbVector>,
    ) -> Result<Self> {
        let id = id.into();
        let k = icl_trace.num_classes();
        if true_label >= k {
            return Err(Error::Shape(format!(
                "record {id}: true_label {true_label} is not below K = {k}"
            )));
        }
        if zero_shot_final.num_classes() != k {
            return Err(Error::Shape(format!(
                "record {id}: zero-shot vector has {} classes, trace has {k}",
                zero_shot_final.num_classes()
            )));
        }
        if let Some(cf) = &content_free_icl_trace {
            if cf.num_layers() != icl_trace.num_layers() || cf.num_classes() != k {
                return Err(Error::Shape(format!(
                    "record {id}: content-free trace is {}x{}, trace is {}x{k}",
                    cf.num_layers(),
                    cf.num_classes(),
                    icl_trace.num_layers()
                )));
            }
        }
        if let Some(cf) = &content_free_zero_shot {
            if cf.num_classes() != k {
                return Err(Error::Shape(format!(
                    "record {id}: content-free zero-shot vector has {} classes, expected {k}",
                    cf.num_classes()
                )));
            }
        }
        Ok(ExampleRecord {
            id,
            dataset: dataset.into(),
            context_kind,
            true_label,
            icl_trace,
            zero_shot_final,
            content_free_icl_trace,
            content_free_zero_shot,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn context_kind(&self) -> ContextKind {
        self.context_kind
    }

    pub fn true_label(&self) -> usize {
        self.true_label
    }

    pub fn icl_trace(&self) -> &LayerTrace {
        &self.icl_trace
    }

    pub fn zero_shot_final(&self) -> &ProbVector {
        &self.zero_shot_final
    }

    pub fn content_free_icl_trace(&self) -> Option<&LayerTrace> {
        self.content_free_icl_trace.as_ref()
    }

    pub fn content_free_zero_shot(&self) -> Option<&ProbVector> {
        self.content_free_zero_shot.as_ref()
    }

    pub fn num_layers(&self) -> usize {
        self.icl_trace.num_layers()
    }

    pub fn num_classes(&self) -> usize {
        self.icl_trace.num_classes()
    }

    /// The trace the predictors see: contextually calibrated layer by layer
    /// when a content-free trace is attached, raw otherwise.
    pub fn effective_trace(&self) -> Cow<'_, LayerTrace> {
        match &self.content_free_icl_trace {
            None => Cow::Borrowed(&self.icl_trace),
            Some(cf) => Cow::Owned(LayerTrace(
                self.icl_trace
                    .layers()
                    .iter()
                    .zip(cf.layers())
                    .map(|(p, q)| contextual_calibrate(p, q))
                    .collect(),
            )),
        }
    }

    pub fn effective_zero_shot(&self) -> Cow<'_, ProbVector> {
        match &self.content_free_zero_shot {
            None => Cow::Borrowed(&self.zero_shot_final),
            Some(cf) => Cow::Owned(contextual_calibrate(&self.zero_shot_final, cf)),
        }
    }

    /// The zero-shot prediction `argmax_k p_L(k | x)`.
    pub fn zero_shot_prediction(&self) -> usize {
        self.effective_zero_shot().argmax()
    }
}

/// Exit threshold, or the sentinel that ignores demonstrations entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    ZeroShotOnly,
    Lambda(f64),
}

impl Threshold {
    pub fn lambda(self) -> Option<f64> {
        match self {
            Threshold::ZeroShotOnly => None,
            Threshold::Lambda(v) => Some(v),
        }
    }

    pub fn is_sentinel(self) -> bool {
        matches!(self, Threshold::ZeroShotOnly)
    }
}

/// Serialized as the string `"zero_shot_only"` or as the number.
impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::ZeroShotOnly => s.serialize_str("zero_shot_only"),
            Threshold::Lambda(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(v) if (0.0..=1.0).contains(&v) => Ok(Threshold::Lambda(v)),
            Repr::Number(v) => Err(serde::de::Error::custom(format!(
                "threshold {v} is outside [0, 1]"
            ))),
            Repr::Name(n) if n == "zero_shot_only" => Ok(Threshold::ZeroShotOnly),
            Repr::Name(n) => Err(serde::de::Error::custom(format!(
                "unknown threshold '{n}' (expected a number or zero_shot_only)"
            ))),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::ZeroShotOnly => f.write_str("zero_shot_only"),
            Threshold::Lambda(v) => write!(f, "{v}"),
        }
    }
}

/// Fully determines the safe predictor: a confidence measure, the earliest
/// layer allowed to exit, and a threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitPolicy {
    threshold: Threshold,
    first_exit_layer: usize,
    confidence: ConfidenceMeasure,
}

impl ExitPolicy {
    pub fn new(
        threshold: Threshold,
        first_exit_layer: usize,
        confidence: ConfidenceMeasure,
    ) -> Result<Self> {
        if let Threshold::Lambda(v) = threshold {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("threshold {v} is outside [0, 1]")));
            }
        }
        if first_exit_layer == 0 {
            return Err(Error::Config("first exit layer is 1-based, got 0".into()));
        }
        Ok(ExitPolicy {
            threshold,
            first_exit_layer,
            confidence,
        })
    }

    pub fn lambda(
        lambda: f64,
        first_exit_layer: usize,
        confidence: ConfidenceMeasure,
    ) -> Result<Self> {
        Self::new(Threshold::Lambda(lambda), first_exit_layer, confidence)
    }

    pub fn zero_shot_only(first_exit_layer: usize, confidence: ConfidenceMeasure) -> Result<Self> {
        Self::new(Threshold::ZeroShotOnly, first_exit_layer, confidence)
    }

    pub fn with_threshold(self, threshold: Threshold) -> Result<Self> {
        Self::new(threshold, self.first_exit_layer, self.confidence)
    }

    pub fn threshold(&self) -> Threshold {
        self.threshold
    }

    pub fn first_exit_layer(&self) -> usize {
        self.first_exit_layer
    }

    pub fn confidence(&self) -> ConfidenceMeasure {
        self.confidence
    }

    fn check_depth(&self, num_layers: usize) -> Result<()> {
        if self.first_exit_layer > num_layers {
            return Err(Error::Config(format!(
                "first exit layer {} exceeds trace depth {num_layers}",
                self.first_exit_layer
            )));
        }
        Ok(())
    }
}

/// First layer in `[first_exit_layer, L]` whose confidence reaches the
/// threshold.
pub fn exit_layer(trace: &LayerTrace, policy: &ExitPolicy) -> Result<Option<usize>> {
    policy.check_depth(trace.num_layers())?;
    let lambda = policy.threshold.lambda().ok_or_else(|| {
        Error::Config("exit layer is undefined for the zero-shot-only policy".into())
    })?;
    Ok((policy.first_exit_layer..=trace.num_layers())
        .find(|&l| policy.confidence.score(trace.layer(l)) >= lambda))
}

/// Plain early-exit prediction: argmax at the exit layer, or at layer `L`.
pub fn predict_early_exit(trace: &LayerTrace, policy: &ExitPolicy) -> Result<usize> {
    let layer = exit_layer(trace, policy)?.unwrap_or(trace.num_layers());
    Ok(trace.layer(layer).argmax())
}

/// Safe ICL prediction: early exit when some layer is confident enough,
/// the zero-shot prediction otherwise.
pub fn predict_safe_icl(record: &ExampleRecord, policy: &ExitPolicy) -> Result<usize> {
    policy.check_depth(record.num_layers())?;
    if policy.threshold.is_sentinel() {
        return Ok(record.zero_shot_prediction());
    }
    let trace = record.effective_trace();
    match exit_layer(&trace, policy)? {
        Some(layer) => Ok(trace.layer(layer).argmax()),
        None => Ok(record.zero_shot_prediction()),
    }
}

/// Demonstration-conditioned layers run: the exit layer, `L` on fallback,
/// and 0 for the sentinel.
pub fn evaluated_layers(record: &ExampleRecord, policy: &ExitPolicy) -> Result<usize> {
    policy.check_depth(record.num_layers())?;
    if policy.threshold.is_sentinel() {
        return Ok(0);
    }
    Ok(exit_layer(&record.effective_trace(), policy)?.unwrap_or(record.num_layers()))
}

/// Layer count when the fallback zero-shot pass is also charged: the exit
/// layer, `2L` on fallback, and `L` for the sentinel.
pub fn evaluated_layers_with_fallback(
    record: &ExampleRecord,
    policy: &ExitPolicy,
) -> Result<usize> {
    policy.check_depth(record.num_layers())?;
    let depth = record.num_layers();
    if policy.threshold.is_sentinel() {
        return Ok(depth);
    }
    Ok(exit_layer(&record.effective_trace(), policy)?.unwrap_or(2 * depth))
}

/// A record reduced to what the predictors need for one confidence measure
/// and first-exit bound: per-layer confidence and argmax from the first
/// allowed exit onwards. Sweeping many thresholds over the same record goes
/// through this view.
#[derive(Debug, Clone)]
pub struct ExitView {
    first_exit_layer: usize,
    num_layers: usize,
    confidences: Vec<f64>,
    predictions: Vec<usize>,
    zero_shot_prediction: usize,
    true_label: usize,
    context_kind: ContextKind,
}

impl ExitView {
    pub fn new(
        record: &ExampleRecord,
        first_exit_layer: usize,
        measure: ConfidenceMeasure,
    ) -> Result<Self> {
        let num_layers = record.num_layers();
        if first_exit_layer == 0 || first_exit_layer > num_layers {
            return Err(Error::Config(format!(
                "first exit layer {first_exit_layer} is outside 1..={num_layers}"
            )));
        }
        let trace = record.effective_trace();
        let window = &trace.layers()[first_exit_layer - 1..];
        Ok(ExitView {
            first_exit_layer,
            num_layers,
            confidences: window.iter().map(|p| measure.score(p)).collect(),
            predictions: window.iter().map(ProbVector::argmax).collect(),
            zero_shot_prediction: record.zero_shot_prediction(),
            true_label: record.true_label(),
            context_kind: record.context_kind(),
        })
    }

    pub fn exit_layer(&self, lambda: f64) -> Option<usize> {
        self.confidences
            .iter()
            .position(|&c| c >= lambda)
            .map(|i| i + self.first_exit_layer)
    }

    pub fn predict(&self, threshold: Threshold) -> usize {
        match threshold {
            Threshold::ZeroShotOnly => self.zero_shot_prediction,
            Threshold::Lambda(lambda) => match self.exit_layer(lambda) {
                Some(l) => self.predictions[l - self.first_exit_layer],
                None => self.zero_shot_prediction,
            },
        }
    }

    pub fn evaluated_layers(&self, threshold: Threshold) -> usize {
        match threshold {
            Threshold::ZeroShotOnly => 0,
            Threshold::Lambda(lambda) => self.exit_layer(lambda).unwrap_or(self.num_layers),
        }
    }

    pub fn evaluated_layers_with_fallback(&self, threshold: Threshold) -> usize {
        match threshold {
            Threshold::ZeroShotOnly => self.num_layers,
            Threshold::Lambda(lambda) => self.exit_layer(lambda).unwrap_or(2 * self.num_layers),
        }
    }

    /// Signed ICL loss in `{-1, 0, 1}`.
    pub fn icl_loss(&self, threshold: Threshold) -> i8 {
        let safe = (self.predict(threshold) != self.true_label) as i8;
        let zero_shot = (self.zero_shot_prediction != self.true_label) as i8;
        safe - zero_shot
    }

    pub fn context_kind(&self) -> ContextKind {
        self.context_kind
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    /// `L = 8`, first exit at 3: confidence 0.3 on layers 3..=6 and 0.8 after.
    fn staircase() -> LayerTrace {
        let low = pv(&[0.3, 0.25, 0.25, 0.2]);
        let high = pv(&[0.1, 0.05, 0.8, 0.05]);
        let mut layers = vec![pv(&[0.9, 0.05, 0.03, 0.02]); 2];
        layers.extend(std::iter::repeat_n(low, 4));
        layers.extend(std::iter::repeat_n(high, 2));
        LayerTrace::new(layers).unwrap()
    }

    fn record(trace: LayerTrace, zero_shot: &[f64], label: usize) -> ExampleRecord {
        ExampleRecord::new(
            "r",
            "d",
            ContextKind::Correct,
            label,
            trace,
            pv(zero_shot),
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![1.0]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::new(vec![f64::NAN, 1.0]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.5 + 5e-7]).is_ok());
    }

    #[test]
    fn argmax_confidence() {
        assert_eq!(confidence_argmax(&ProbVector::uniform(4).unwrap()), 0.25);
        assert_eq!(confidence_argmax(&pv(&[0.7, 0.2, 0.1])), 0.7);
        assert_eq!(confidence_argmax(&pv(&[0.0, 1.0, 0.0])), 1.0);
    }

    #[test]
    fn top2_confidence() {
        assert_eq!(confidence_top2(&pv(&[0.0, 0.0, 1.0])), 1.0);
        assert_eq!(confidence_top2(&ProbVector::uniform(5).unwrap()), 0.0);
        assert!((confidence_top2(&pv(&[0.5, 0.3, 0.2])) - 0.2).abs() < 1e-15);
        assert!((confidence_top2(&pv(&[0.3, 0.5, 0.2])) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn entropy_confidence() {
        assert_eq!(confidence_entropy(&pv(&[1.0, 0.0, 0.0, 0.0])), 1.0);
        assert!(confidence_entropy(&ProbVector::uniform(4).unwrap()).abs() < 1e-15);
        // 1 - H(0.9, 0.1) / ln 2, evaluated at 50 digits.
        let expected = 0.531_004_406_410_718_8;
        assert!((confidence_entropy(&pv(&[0.9, 0.1])) - expected).abs() < 1e-9);
    }

    #[test]
    fn exit_layer_examples() {
        let trace = staircase();
        let at = |lambda| ExitPolicy::lambda(lambda, 3, ConfidenceMeasure::Argmax).unwrap();
        assert_eq!(exit_layer(&trace, &at(0.0)).unwrap(), Some(3));
        assert_eq!(exit_layer(&trace, &at(1.0)).unwrap(), None);
        assert_eq!(exit_layer(&trace, &at(0.7)).unwrap(), Some(7));
        // layers 1 and 2 are confident but precede the first exit
        assert_eq!(exit_layer(&trace, &at(0.85)).unwrap(), None);
    }

    #[test]
    fn exit_layer_rejects_bad_configuration() {
        let trace = staircase();
        let deep = ExitPolicy::lambda(0.5, 9, ConfidenceMeasure::Argmax).unwrap();
        assert!(matches!(exit_layer(&trace, &deep), Err(Error::Config(_))));
        let sentinel = ExitPolicy::zero_shot_only(3, ConfidenceMeasure::Argmax).unwrap();
        assert!(exit_layer(&trace, &sentinel).is_err());
        assert!(ExitPolicy::lambda(1.5, 3, ConfidenceMeasure::Argmax).is_err());
        assert!(ExitPolicy::lambda(0.5, 0, ConfidenceMeasure::Argmax).is_err());
    }

    #[test]
    fn early_exit_predictions() {
        let immediate = LayerTrace::new(vec![pv(&[0.1, 0.6, 0.3]), pv(&[0.5, 0.5, 0.0])]).unwrap();
        let p0 = ExitPolicy::lambda(0.0, 1, ConfidenceMeasure::Argmax).unwrap();
        assert_eq!(predict_early_exit(&immediate, &p0).unwrap(), 1);

        let tied = LayerTrace::new(vec![pv(&[0.3, 0.7]), pv(&[0.5, 0.5])]).unwrap();
        let high = ExitPolicy::lambda(0.9, 1, ConfidenceMeasure::Argmax).unwrap();
        assert_eq!(predict_early_exit(&tied, &high).unwrap(), 0);

        let p = ExitPolicy::lambda(0.7, 3, ConfidenceMeasure::Argmax).unwrap();
        assert_eq!(predict_early_exit(&staircase(), &p).unwrap(), 2);
    }

    #[test]
    fn safe_predictor_falls_back_to_zero_shot() {
        let r = record(staircase(), &[0.1, 0.7, 0.1, 0.1], 1);
        let sentinel = ExitPolicy::zero_shot_only(3, ConfidenceMeasure::Argmax).unwrap();
        assert_eq!(predict_safe_icl(&r, &sentinel).unwrap(), 1);

        let zero = ExitPolicy::lambda(0.0, 3, ConfidenceMeasure::Argmax).unwrap();
        assert_eq!(
            predict_safe_icl(&r, &zero).unwrap(),
            predict_early_exit(r.icl_trace(), &zero).unwrap()
        );

        let never = ExitPolicy::lambda(0.95, 3, ConfidenceMeasure::Argmax).unwrap();
        assert_eq!(predict_safe_icl(&r, &never).unwrap(), 1);
        // plain early exit would have used the final layer instead
        assert_eq!(predict_early_exit(r.icl_trace(), &never).unwrap(), 2);
    }

    #[test]
    fn layer_accounting() {
        let r = record(staircase(), &[0.1, 0.7, 0.1, 0.1], 1);
        let at = |lambda| ExitPolicy::lambda(lambda, 3, ConfidenceMeasure::Argmax).unwrap();
        assert_eq!(evaluated_layers(&r, &at(0.0)).unwrap(), 3);
        assert_eq!(evaluated_layers(&r, &at(0.95)).unwrap(), 8);
        let sentinel = ExitPolicy::zero_shot_only(3, ConfidenceMeasure::Argmax).unwrap();
        assert_eq!(evaluated_layers(&r, &sentinel).unwrap(), 0);

        assert_eq!(evaluated_layers_with_fallback(&r, &at(0.0)).unwrap(), 3);
        assert_eq!(evaluated_layers_with_fallback(&r, &at(0.95)).unwrap(), 16);
        assert_eq!(evaluated_layers_with_fallback(&r, &sentinel).unwrap(), 8);
    }

    #[test]
    fn content_free_trace_is_applied() {
        // Raw layers favour class 0; the content-free trace carries the same
        // bias, so calibration flips the final-layer decision to class 1.
        let raw = LayerTrace::new(vec![pv(&[0.6, 0.4]), pv(&[0.6, 0.4])]).unwrap();
        let cf = LayerTrace::new(vec![pv(&[0.75, 0.25]), pv(&[0.75, 0.25])]).unwrap();
        let r = ExampleRecord::new(
            "r",
            "d",
            ContextKind::Correct,
            1,
            raw,
            pv(&[0.5, 0.5]),
            Some(cf),
            None,
        )
        .unwrap();
        let p = ExitPolicy::lambda(0.6, 1, ConfidenceMeasure::Argmax).unwrap();
        assert_eq!(exit_layer(&r.effective_trace(), &p).unwrap(), Some(1));
        assert_eq!(predict_safe_icl(&r, &p).unwrap(), 1);
    }

    #[test]
    fn record_shape_checks() {
        let short = LayerTrace::new(vec![pv(&[0.5, 0.5]), pv(&[0.5, 0.5])]).unwrap();
        let three = pv(&[0.2, 0.3, 0.5]);
        assert!(ExampleRecord::new(
            "x",
            "d",
            ContextKind::Correct,
            2,
            short.clone(),
            pv(&[0.5, 0.5]),
            None,
            None
        )
        .is_err());
        assert!(ExampleRecord::new(
            "x",
            "d",
            ContextKind::Correct,
            0,
            short.clone(),
            three,
            None,
            None
        )
        .is_err());
        let cf = LayerTrace::new(vec![pv(&[0.5, 0.5]); 3]).unwrap();
        assert!(ExampleRecord::new(
            "x",
            "d",
            ContextKind::Correct,
            0,
            short,
            pv(&[0.5, 0.5]),
            Some(cf),
            None
        )
        .is_err());
        assert!(LayerTrace::new(vec![pv(&[0.5, 0.5])]).is_err());
        assert!(LayerTrace::new(vec![pv(&[0.5, 0.5]), pv(&[0.2, 0.3, 0.5])]).is_err());
    }
}
