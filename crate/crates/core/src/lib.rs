//! Risk-controlled early exit for in-context learning cascades.
//!
//! A cascade exposes a class distribution at every layer. The safe predictor
//! exits at the first layer whose confidence reaches a threshold and falls
//! back to the zero-shot prediction when none does. The threshold is picked
//! by Learn-then-Test on a calibration set so that the expected loss relative
//! to zero-shot stays below a tolerance with high probability.

pub mod cascade;
pub mod cli;
pub mod error;
pub mod harness;
pub mod io;
pub mod loss;
pub mod risk;
pub mod sim;

pub use cascade::{
    confidence_argmax, confidence_entropy, confidence_top2, evaluated_layers,
    evaluated_layers_with_fallback, exit_layer, predict_early_exit, predict_safe_icl,
    ConfidenceMeasure, ContextKind, ExampleRecord, ExitPolicy, ExitView, LayerTrace, ProbVector,
    Threshold,
};
pub use error::{Error, Result};
pub use loss::{
    base_loss, clip_loss, contextual_calibrate, empirical_icl_risk, empirical_risk, icl_loss,
    scale_epsilon, scale_loss, LossCounts, LossMode, LossSpec, RiskBudget,
};
pub use risk::{
    binom_cdf, certify, hb_pvalue, kl_bernoulli, ltt_select, Certification, LambdaGrid, Selection,
};
