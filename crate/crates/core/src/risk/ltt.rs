//! Learn-then-Test threshold selection by fixed-sequence testing.
//!
//! Candidates are tested in grid order, the zero-shot-only sentinel first and
//! then thresholds from 1 downwards. Testing stops at the first candidate
//! whose p-value exceeds `delta`; the selected threshold is the last one
//! certified before that. Fixed-sequence testing controls the family-wise
//! error without any monotonicity of the risk in the threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{ExampleRecord, ExitPolicy, ExitView, Threshold};
use crate::error::{Error, Result};
use crate::loss::{view_counts, LossCounts, LossSpec, RiskBudget};
use crate::risk::bounds::hb_pvalue;

/// Candidate thresholds, strictly decreasing in `[0, 1]`, optionally
/// preceded by the zero-shot-only sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    values: Vec<f64>,
    include_sentinel: bool,
}

impl LambdaGrid {
    pub const DEFAULT_POINTS: usize = 101;

    pub fn new(values: Vec<f64>, include_sentinel: bool) -> Result<Self> {
        if values.is_empty() && !include_sentinel {
            return Err(Error::Config("threshold grid is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("grid value {v} is outside [0, 1]")));
        }
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(
                "grid values must be strictly decreasing".into(),
            ));
        }
        Ok(LambdaGrid {
            values,
            include_sentinel,
        })
    }

    /// `points` evenly spaced thresholds from 1 down to 0, sentinel first.
    pub fn evenly_spaced(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::Config(format!(
                "grid needs at least 2 points, got {points}"
            )));
        }
        let steps = (points - 1) as f64;
        Self::new(
            (0..points)
                .map(|i| (points - 1 - i) as f64 / steps)
                .collect(),
            true,
        )
    }

    pub fn sentinel_only() -> Self {
        LambdaGrid {
            values: Vec::new(),
            include_sentinel: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn include_sentinel(&self) -> bool {
        self.include_sentinel
    }

    /// Candidates in testing order.
    pub fn candidates(&self) -> Vec<Threshold> {
        let sentinel = self.include_sentinel.then_some(Threshold::ZeroShotOnly);
        sentinel
            .into_iter()
            .chain(self.values.iter().map(|&v| Threshold::Lambda(v)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.values.len() + self.include_sentinel as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self::evenly_spaced(Self::DEFAULT_POINTS).expect("default grid is valid")
    }
}

/// Outcome of testing one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub lambda: Threshold,
    /// Mean signed ICL loss on the calibration set.
    pub raw_risk: f64,
    /// Mean of the mode-selected loss (scaled or clipped).
    pub empirical_risk: f64,
    /// HB p-value; 0 for the sentinel, whose loss is zero by construction.
    pub p_value: f64,
    pub certified: bool,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub lambda_hat: Threshold,
    pub trail: Vec<Certification>,
}

impl Selection {
    pub fn certified_count(&self) -> usize {
        self.trail.iter().take_while(|c| c.certified).count()
    }
}

/// Certification from already tallied losses.
pub fn certification_from_counts(
    lambda: Threshold,
    counts: &LossCounts,
    budget: &RiskBudget,
    spec: &LossSpec,
) -> Result<Certification> {
    let n = counts.total();
    if n == 0 {
        return Err(Error::Empty("certification over an empty record set"));
    }
    let (p_value, certified) = match lambda {
        Threshold::ZeroShotOnly => (0.0, true),
        Threshold::Lambda(_) => {
            let p = hb_pvalue(
                counts.normalized_risk(spec),
                n as u64,
                budget.test_level(spec),
            )?;
            (p, p <= budget.delta())
        }
    };
    Ok(Certification {
        lambda,
        raw_risk: counts.raw_risk(),
        empirical_risk: counts.mode_risk(spec),
        p_value,
        certified,
        n,
    })
}

fn check_budget(budget: &RiskBudget, spec: &LossSpec) -> Result<()> {
    let (lo, hi) = spec.epsilon_range();
    if !(budget.epsilon() > lo && budget.epsilon() < hi) {
        return Err(Error::Budget {
            epsilon: budget.epsilon(),
            lower: lo,
            upper: hi,
        });
    }
    Ok(())
}

/// Test one candidate threshold against the budget.
pub fn certify(
    lambda: Threshold,
    records: &[ExampleRecord],
    budget: &RiskBudget,
    spec: &LossSpec,
    template: &ExitPolicy,
) -> Result<Certification> {
    if records.is_empty() {
        return Err(Error::Empty("certification over an empty record set"));
    }
    check_budget(budget, spec)?;
    let policy = template.with_threshold(lambda)?;
    let counts = crate::loss::loss_counts(records, &policy)?;
    certification_from_counts(lambda, &counts, budget, spec)
}

pub fn build_views(records: &[ExampleRecord], template: &ExitPolicy) -> Result<Vec<ExitView>> {
    records
        .par_iter()
        .map(|r| ExitView::new(r, template.first_exit_layer(), template.confidence()))
        .collect()
}

/// Loss tallies for every grid candidate, in grid order.
pub fn sweep_counts(views: &[ExitView], grid: &LambdaGrid) -> Vec<LossCounts> {
    grid.candidates()
        .into_par_iter()
        .map(|t| view_counts(views, t))
        .collect()
}

/// Fixed-sequence selection over tallies produced by [`sweep_counts`].
pub fn select_from_counts(
    counts: &[LossCounts],
    grid: &LambdaGrid,
    budget: &RiskBudget,
    spec: &LossSpec,
) -> Result<Selection> {
    if !grid.include_sentinel() {
        return Err(Error::Config(
            "fixed-sequence grid must start with the zero-shot-only sentinel".into(),
        ));
    }
    check_budget(budget, spec)?;
    let candidates = grid.candidates();
    assert_eq!(candidates.len(), counts.len(), "one tally per candidate");

    let mut trail = Vec::with_capacity(candidates.len());
    let mut lambda_hat = Threshold::ZeroShotOnly;
    let mut open = true;
    for (&lambda, c) in candidates.iter().zip(counts) {
        let mut cert = certification_from_counts(lambda, c, budget, spec)?;
        cert.certified &= open;
        if cert.certified {
            lambda_hat = lambda;
        } else {
            open = false;
        }
        trail.push(cert);
    }
    Ok(Selection { lambda_hat, trail })
}

/// Learn-then-Test selection of the smallest threshold certified by
/// fixed-sequence testing.
pub fn ltt_select(
    records: &[ExampleRecord],
    grid: &LambdaGrid,
    budget: &RiskBudget,
    spec: &LossSpec,
    template: &ExitPolicy,
) -> Result<Selection> {
    if records.is_empty() {
        return Err(Error::Empty("calibration over an empty record set"));
    }
    let views = build_views(records, template)?;
    select_from_counts(&sweep_counts(&views, grid), grid, budget, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{ConfidenceMeasure, ContextKind, LayerTrace, ProbVector};
    use crate::loss::LossMode;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    /// K = 2, L = 2, true label 0. Layer 2 predicts `icl` with confidence
    /// `conf`; the zero-shot prediction is `zs`.
    fn record(icl: usize, conf: f64, zs: usize) -> ExampleRecord {
        let at = |k: usize, c: f64| {
            if k == 0 {
                pv(&[c, 1.0 - c])
            } else {
                pv(&[1.0 - c, c])
            }
        };
        let trace = LayerTrace::new(vec![pv(&[0.5, 0.5]), at(icl, conf)]).unwrap();
        ExampleRecord::new(
            "r",
            "d",
            ContextKind::Correct,
            0,
            trace,
            at(zs, 0.9),
            None,
            None,
        )
        .unwrap()
    }

    fn template() -> ExitPolicy {
        ExitPolicy::lambda(0.5, 2, ConfidenceMeasure::Argmax).unwrap()
    }

    fn scaled() -> LossSpec {
        LossSpec::classification(LossMode::Scaled)
    }

    #[test]
    fn default_grid_shape() {
        let g = LambdaGrid::default();
        assert_eq!(g.len(), 102);
        let c = g.candidates();
        assert_eq!(c[0], Threshold::ZeroShotOnly);
        assert_eq!(c[1], Threshold::Lambda(1.0));
        assert_eq!(c[2], Threshold::Lambda(0.99));
        assert_eq!(c[101], Threshold::Lambda(0.0));
        assert!(LambdaGrid::new(vec![0.5, 0.5], true).is_err());
        assert!(LambdaGrid::new(vec![1.2], true).is_err());
        assert!(LambdaGrid::new(vec![], false).is_err());
    }

    #[test]
    fn sentinel_is_certified_without_a_test() {
        let records = vec![record(1, 0.99, 0); 5];
        let budget = RiskBudget::new(0.05, 0.05, &scaled()).unwrap();
        let c = certify(
            Threshold::ZeroShotOnly,
            &records,
            &budget,
            &scaled(),
            &template(),
        )
        .unwrap();
        assert!(c.certified);
        assert_eq!(c.raw_risk, 0.0);
        assert_eq!(c.empirical_risk, 0.5);
    }

    #[test]
    fn maximal_risk_is_not_certified() {
        let records = vec![record(1, 0.99, 0); 50];
        let budget = RiskBudget::new(0.05, 0.05, &scaled()).unwrap();
        let c = certify(
            Threshold::Lambda(0.5),
            &records,
            &budget,
            &scaled(),
            &template(),
        )
        .unwrap();
        assert_eq!(c.empirical_risk, 1.0);
        assert_eq!(c.p_value, 1.0);
        assert!(!c.certified);
    }

    #[test]
    fn helpful_everywhere_certifies_the_whole_grid() {
        // every exit is right where zero-shot is wrong; conf 1 so every
        // threshold exits
        let records = vec![record(0, 1.0, 1); 1000];
        let budget = RiskBudget::new(0.05, 1e-6, &scaled()).unwrap();
        let c = certify(
            Threshold::Lambda(0.3),
            &records,
            &budget,
            &scaled(),
            &template(),
        )
        .unwrap();
        assert_eq!(c.empirical_risk, 0.0);
        assert!(c.p_value < 1e-300);
        let s = ltt_select(
            &records,
            &LambdaGrid::default(),
            &budget,
            &scaled(),
            &template(),
        )
        .unwrap();
        assert_eq!(s.lambda_hat, Threshold::Lambda(0.0));
        assert!(s.trail.iter().all(|c| c.certified));
    }

    #[test]
    fn stops_at_first_failure() {
        // harmful exits at confidence 0.95: every lambda <= 0.95 fails
        let records = vec![record(1, 0.95, 0); 200];
        let budget = RiskBudget::new(0.05, 0.05, &scaled()).unwrap();
        let s = ltt_select(
            &records,
            &LambdaGrid::default(),
            &budget,
            &scaled(),
            &template(),
        )
        .unwrap();
        // lambda = 1.0 down to 0.96 see no exits and a raw risk of exactly 0,
        // but with n = 200 a scaled risk of 0.5 cannot be separated from 0.525
        assert_eq!(s.lambda_hat, Threshold::ZeroShotOnly);
        assert_eq!(s.certified_count(), 1);
        let first_false = s.trail.iter().position(|c| !c.certified).unwrap();
        assert!(s.trail[first_false..].iter().all(|c| !c.certified));
    }

    #[test]
    fn clipped_mode_tests_clipped_risk() {
        let records = vec![record(1, 0.95, 0); 200];
        let clipped = LossSpec::classification(LossMode::Clipped);
        let budget = RiskBudget::new(0.05, 0.05, &clipped).unwrap();
        let s = ltt_select(
            &records,
            &LambdaGrid::default(),
            &budget,
            &clipped,
            &template(),
        )
        .unwrap();
        // clipped risk is exactly 0 above 0.95, which is certified
        assert_eq!(s.lambda_hat, Threshold::Lambda(0.96));
    }

    #[test]
    fn sentinel_only_grid() {
        let records = vec![record(1, 0.95, 0); 10];
        let budget = RiskBudget::new(0.05, 0.05, &scaled()).unwrap();
        let s = ltt_select(
            &records,
            &LambdaGrid::sentinel_only(),
            &budget,
            &scaled(),
            &template(),
        )
        .unwrap();
        assert_eq!(s.lambda_hat, Threshold::ZeroShotOnly);
        assert_eq!(s.trail.len(), 1);
    }

    #[test]
    fn grid_without_sentinel_is_rejected() {
        let records = vec![record(0, 0.95, 0); 10];
        let budget = RiskBudget::new(0.05, 0.05, &scaled()).unwrap();
        let grid = LambdaGrid::new(vec![0.9, 0.5], false).unwrap();
        assert!(ltt_select(&records, &grid, &budget, &scaled(), &template()).is_err());
        assert!(ltt_select(&[], &LambdaGrid::default(), &budget, &scaled(), &template()).is_err());
    }
}
