//! Repeated calibration/test experiments: risk-vs-tolerance curves,
//! scaled-vs-clipped efficiency, per-kind breakdowns and mix sweeps.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cascade::{
    ConfidenceMeasure, ContextKind, ExampleRecord, ExitPolicy, ExitView, Threshold,
};
use crate::error::{Error, Result};
use crate::loss::{LossCounts, LossMode, LossSpec, RiskBudget};
use crate::risk::{build_views, select_from_counts, sweep_counts, LambdaGrid};
use crate::sim::{oracle_loss_laws, simulate_dataset, DiscreteProfile, NoiseModel, SimProfile};

/// Caveat attached to every per-kind breakdown.
pub const CLASS_CONDITIONAL_CAVEAT: &str =
    "per-kind risks are descriptive only; the guarantee covers the marginal risk over the mix";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialConfig {
    pub num_trials: usize,
    pub calibration_fraction: f64,
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub modes: Vec<LossMode>,
    pub confidence: ConfidenceMeasure,
    /// `None` uses the profile's value, or `L / 2` for record files.
    pub first_exit_layer: Option<usize>,
    /// Evenly spaced thresholds after the sentinel; 0 tests the sentinel only.
    pub grid_points: usize,
    /// Dataset size drawn per trial from a profile; unused for record files.
    pub records_per_trial: usize,
    pub seed: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            num_trials: 100,
            calibration_fraction: 0.5,
            epsilons: vec![0.05, 0.10, 0.15, 0.20, 0.25],
            delta: 0.05,
            modes: LossMode::ALL.to_vec(),
            confidence: ConfidenceMeasure::Argmax,
            first_exit_layer: None,
            grid_points: LambdaGrid::DEFAULT_POINTS,
            records_per_trial: 4000,
            seed: 0,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_trials == 0 {
            return Err(Error::Config("num_trials must be at least 1".into()));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(Error::Config(format!(
                "calibration_fraction {} is outside (0, 1)",
                self.calibration_fraction
            )));
        }
        if self.epsilons.is_empty() {
            return Err(Error::Config("epsilon grid is empty".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("no loss modes requested".into()));
        }
        for &mode in &self.modes {
            let spec = LossSpec::classification(mode);
            for &eps in &self.epsilons {
                RiskBudget::new(eps, self.delta, &spec)?;
            }
        }
        if self.records_per_trial < 2 {
            return Err(Error::Config("records_per_trial must be at least 2".into()));
        }
        self.grid()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<LambdaGrid> {
        match self.grid_points {
            0 => Ok(LambdaGrid::sentinel_only()),
            points => LambdaGrid::evenly_spaced(points),
        }
    }
}

/// Records to experiment on: a generator that is resampled every trial, or
/// a fixed set whose split alone is resampled.
#[derive(Debug, Clone, Copy)]
pub enum TrialSource<'a> {
    Profile(&'a SimProfile),
    Records(&'a [ExampleRecord]),
}

/// Random partition into a calibration set of `round(fraction * n)` items
/// and a test set holding the rest.
pub fn split_trial<T: Clone, R: Rng + ?Sized>(
    items: &[T],
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<T>, Vec<T>)> {
    let (cal, test) = split_indices(items.len(), fraction, rng)?;
    Ok((
        cal.iter().map(|&i| items[i].clone()).collect(),
        test.iter().map(|&i| items[i].clone()).collect(),
    ))
}

fn split_indices<R: Rng + ?Sized>(
    n: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Config(format!(
            "a split needs at least 2 records, got {n}"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "calibration fraction {fraction} is outside (0, 1)"
        )));
    }
    let n_cal = (fraction * n as f64).round() as usize;
    if n_cal == 0 || n_cal == n {
        return Err(Error::Config(format!(
            "fraction {fraction} of {n} records leaves one side of the split empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let test = order.split_off(n_cal);
    Ok((order, test))
}

/// Result of one (trial, epsilon, mode) cell on the test half.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub lambda_hat: Threshold,
    /// Mean raw ICL loss on the test half.
    pub test_risk: f64,
    pub mean_layers: f64,
    pub mean_layers_with_fallback: f64,
    pub correct_risk: Option<f64>,
    pub incorrect_risk: Option<f64>,
    /// Exact raw ICL risk of the selected threshold, for enumerable profiles.
    pub oracle_risk: Option<f64>,
    /// Digest of the calibration indices; equal digests mean a shared split.
    pub split_id: String,
}

/// Aggregate over trials for one (epsilon, mode).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub epsilon: f64,
    pub mode: LossMode,
    pub mean_test_risk: f64,
    /// Sample standard deviation over `sqrt(num_trials)`; 0 for one trial.
    pub std_error: f64,
    /// Mean over trials that selected a numeric threshold.
    pub mean_lambda_hat: Option<f64>,
    pub sentinel_rate: f64,
    pub mean_layers: f64,
    pub mean_layers_with_fallback: f64,
    pub correct_risk: Option<f64>,
    pub incorrect_risk: Option<f64>,
    /// Fraction of trials whose exact risk exceeds epsilon.
    pub violation_rate: Option<f64>,
    pub trials: Vec<TrialOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub config: TrialConfig,
    /// Profile fingerprint, or a digest of the record ids.
    pub source: String,
    pub first_exit_layer: usize,
    pub num_layers: usize,
    /// Set when a single trial makes the standard errors meaningless.
    pub degenerate: bool,
    pub cells: Vec<CellSummary>,
}

impl TrialReport {
    pub fn cell(&self, epsilon: f64, mode: LossMode) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.epsilon == epsilon && c.mode == mode)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

fn split_digest(indices: &[usize]) -> String {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    for i in sorted {
        h.update((i as u64).to_le_bytes());
    }
    h.finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn records_digest(records: &[ExampleRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(r.id().as_bytes());
        h.update([0]);
    }
    let hex: String = h
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect();
    format!("records:{}:{hex}", records.len())
}

/// Test-half statistics of one threshold.
fn evaluate_views(
    views: &[&ExitView],
    threshold: Threshold,
) -> (f64, f64, f64, Option<f64>, Option<f64>) {
    let mut all = LossCounts::default();
    let mut by_kind = [LossCounts::default(), LossCounts::default()];
    let (mut layers, mut layers_fb) = (0usize, 0usize);
    for v in views {
        let loss = v.icl_loss(threshold);
        all.push(loss);
        by_kind[(v.context_kind() == ContextKind::Incorrect) as usize].push(loss);
        layers += v.evaluated_layers(threshold);
        layers_fb += v.evaluated_layers_with_fallback(threshold);
    }
    let n = views.len() as f64;
    let kind_risk = |c: &LossCounts| (c.total() > 0).then(|| c.raw_risk());
    (
        all.raw_risk(),
        layers as f64 / n,
        layers_fb as f64 / n,
        kind_risk(&by_kind[0]),
        kind_risk(&by_kind[1]),
    )
}

struct Plan {
    grid: LambdaGrid,
    template: ExitPolicy,
    /// Exact raw ICL risk per grid candidate.
    oracle: Option<Vec<f64>>,
}

fn plan(config: &TrialConfig, source: &TrialSource) -> Result<(Plan, usize)> {
    config.validate()?;
    let (num_layers, default_first) = match source {
        TrialSource::Profile(p) => {
            p.validate()?;
            (p.num_layers, p.first_exit_layer)
        }
        TrialSource::Records(records) => {
            let first = records
                .first()
                .ok_or(Error::Empty("trials over an empty record set"))?;
            let l = first.num_layers();
            if let Some(r) = records
                .iter()
                .find(|r| r.num_layers() != l || r.num_classes() != first.num_classes())
            {
                return Err(Error::Shape(format!(
                    "record {} does not match the shape of {}",
                    r.id(),
                    first.id()
                )));
            }
            (l, (l / 2).max(1))
        }
    };
    let first_exit = config.first_exit_layer.unwrap_or(default_first);
    let template = ExitPolicy::lambda(1.0, first_exit, config.confidence)?;
    if first_exit > num_layers {
        return Err(Error::Config(format!(
            "first exit layer {first_exit} exceeds trace depth {num_layers}"
        )));
    }
    let grid = config.grid()?;
    let oracle = match source {
        TrialSource::Profile(p) if p.noise_model == NoiseModel::Discrete => {
            let d = DiscreteProfile::new((*p).clone())?;
            let laws = oracle_loss_laws(&d, &template, &grid.candidates())?;
            Some(laws.iter().map(|l| l.icl_risk()).collect())
        }
        _ => None,
    };
    Ok((
        Plan {
            grid,
            template,
            oracle,
        },
        num_layers,
    ))
}

/// Per-trial work: split, tally every candidate once on the calibration
/// half, select per (epsilon, mode), score on the test half. Outcomes are
/// indexed `[epsilon][mode]`.
fn run_one(
    trial: usize,
    config: &TrialConfig,
    source: &TrialSource,
    shared_views: Option<&[ExitView]>,
    plan: &Plan,
) -> Result<Vec<Vec<TrialOutcome>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(trial as u64);
    let owned;
    let views: &[ExitView] = match (source, shared_views) {
        (_, Some(v)) => v,
        (TrialSource::Profile(p), None) => {
            let data_seed = rng.next_u64();
            let records = simulate_dataset(p, config.records_per_trial, data_seed)?;
            owned = build_views(&records, &plan.template)?;
            &owned
        }
        (TrialSource::Records(_), None) => unreachable!("record views are built once"),
    };
    let (cal_idx, test_idx) = split_indices(views.len(), config.calibration_fraction, &mut rng)?;
    let split_id = split_digest(&cal_idx);
    let cal: Vec<ExitView> = cal_idx.iter().map(|&i| views[i].clone()).collect();
    let test: Vec<&ExitView> = test_idx.iter().map(|&i| &views[i]).collect();
    let counts = sweep_counts(&cal, &plan.grid);

    let mut out = Vec::with_capacity(config.epsilons.len());
    for &eps in &config.epsilons {
        let mut row = Vec::with_capacity(config.modes.len());
        for &mode in &config.modes {
            let spec = LossSpec::classification(mode);
            let budget = RiskBudget::new(eps, config.delta, &spec)?;
            let selection = select_from_counts(&counts, &plan.grid, &budget, &spec)?;
            let index = selection.certified_count() - 1;
            let (test_risk, mean_layers, mean_layers_with_fallback, correct_risk, incorrect_risk) =
                evaluate_views(&test, selection.lambda_hat);
            row.push(TrialOutcome {
                trial,
                lambda_hat: selection.lambda_hat,
                test_risk,
                mean_layers,
                mean_layers_with_fallback,
                correct_risk,
                incorrect_risk,
                oracle_risk: plan.oracle.as_ref().map(|o| o[index]),
                split_id: split_id.clone(),
            });
        }
        out.push(row);
    }
    Ok(out)
}

fn summarize(epsilon: f64, mode: LossMode, trials: Vec<TrialOutcome>) -> CellSummary {
    let risks: Vec<f64> = trials.iter().map(|t| t.test_risk).collect();
    let n = trials.len() as f64;
    CellSummary {
        epsilon,
        mode,
        mean_test_risk: risks.iter().sum::<f64>() / n,
        std_error: std_error(&risks),
        mean_lambda_hat: mean(trials.iter().filter_map(|t| t.lambda_hat.lambda())),
        sentinel_rate: trials.iter().filter(|t| t.lambda_hat.is_sentinel()).count() as f64 / n,
        mean_layers: trials.iter().map(|t| t.mean_layers).sum::<f64>() / n,
        mean_layers_with_fallback: trials
            .iter()
            .map(|t| t.mean_layers_with_fallback)
            .sum::<f64>()
            / n,
        correct_risk: mean(trials.iter().filter_map(|t| t.correct_risk)),
        incorrect_risk: mean(trials.iter().filter_map(|t| t.incorrect_risk)),
        violation_rate: trials
            .iter()
            .map(|t| t.oracle_risk.map(|r| (r > epsilon) as u8 as f64))
            .collect::<Option<Vec<f64>>>()
            .and_then(|v| mean(v.into_iter())),
        trials,
    }
}

/// Run `num_trials` independent calibration/test experiments. Trials run
/// in parallel; trial `t` draws everything from stream `t` of a generator
/// seeded with `config.seed`, so the report does not depend on scheduling.
pub fn run_trials(source: TrialSource, config: &TrialConfig) -> Result<TrialReport> {
    let (plan, num_layers) = plan(config, &source)?;
    let shared = match source {
        TrialSource::Records(records) => Some(build_views(records, &plan.template)?),
        TrialSource::Profile(_) => None,
    };
    let per_trial: Vec<Vec<Vec<TrialOutcome>>> = (0..config.num_trials)
        .into_par_iter()
        .map(|t| run_one(t, config, &source, shared.as_deref(), &plan))
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for (e, &eps) in config.epsilons.iter().enumerate() {
        for (m, &mode) in config.modes.iter().enumerate() {
            let trials = per_trial.iter().map(|t| t[e][m].clone()).collect();
            cells.push(summarize(eps, mode, trials));
        }
    }
    Ok(TrialReport {
        config: config.clone(),
        source: match source {
            TrialSource::Profile(p) => format!("profile:{}", p.fingerprint()),
            TrialSource::Records(r) => records_digest(r),
        },
        first_exit_layer: plan.template.first_exit_layer(),
        num_layers,
        degenerate: config.num_trials == 1,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyRow {
    pub epsilon: f64,
    pub scaled_layers: f64,
    pub clipped_layers: f64,
    /// `(clipped - scaled) / clipped`; undefined when clipped is 0.
    pub savings: Option<f64>,
    pub scaled_layers_with_fallback: f64,
    pub clipped_layers_with_fallback: f64,
    pub savings_with_fallback: Option<f64>,
    /// Trials where scaled evaluates no more layers than clipped.
    pub trials_not_worse: usize,
    /// Trials where the two selected thresholds differ.
    pub trials_differing: usize,
    /// Differing trials where scaled evaluates strictly fewer layers.
    pub trials_strictly_better: usize,
    pub num_trials: usize,
}

fn savings(clipped: f64, scaled: f64) -> Option<f64> {
    (clipped > 0.0).then(|| (clipped - scaled) / clipped)
}

/// Scaled-vs-clipped layer counts per epsilon. Both modes must have run on
/// the same splits.
pub fn efficiency_report(report: &TrialReport) -> Result<Vec<EfficiencyRow>> {
    let mut rows = Vec::new();
    for &eps in &report.config.epsilons {
        let (Some(s), Some(c)) = (
            report.cell(eps, LossMode::Scaled),
            report.cell(eps, LossMode::Clipped),
        ) else {
            return Err(Error::Protocol(format!(
                "efficiency needs both scaled and clipped results at epsilon {eps}"
            )));
        };
        if s.trials.len() != c.trials.len()
            || s.trials
                .iter()
                .zip(&c.trials)
                .any(|(a, b)| a.split_id != b.split_id)
        {
            return Err(Error::Protocol(format!(
                "scaled and clipped runs at epsilon {eps} used different splits"
            )));
        }
        let pairs = || s.trials.iter().zip(&c.trials);
        let differing: Vec<_> = pairs()
            .filter(|(a, b)| a.lambda_hat != b.lambda_hat)
            .collect();
        rows.push(EfficiencyRow {
            epsilon: eps,
            scaled_layers: s.mean_layers,
            clipped_layers: c.mean_layers,
            savings: savings(c.mean_layers, s.mean_layers),
            scaled_layers_with_fallback: s.mean_layers_with_fallback,
            clipped_layers_with_fallback: c.mean_layers_with_fallback,
            savings_with_fallback: savings(
                c.mean_layers_with_fallback,
                s.mean_layers_with_fallback,
            ),
            trials_not_worse: pairs()
                .filter(|(a, b)| a.mean_layers <= b.mean_layers)
                .count(),
            trials_differing: differing.len(),
            trials_strictly_better: differing
                .iter()
                .filter(|(a, b)| a.mean_layers < b.mean_layers)
                .count(),
            num_trials: s.trials.len(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassConditionalRow {
    pub epsilon: f64,
    pub mode: LossMode,
    /// `None` when no test set held a record of that kind.
    pub correct: Option<f64>,
    pub incorrect: Option<f64>,
    pub caveat: &'static str,
}

/// Mean test ICL loss restricted to each context kind.
pub fn class_conditional_report(report: &TrialReport) -> Vec<ClassConditionalRow> {
    report
        .cells
        .iter()
        .map(|c| ClassConditionalRow {
            epsilon: c.epsilon,
            mode: c.mode,
            correct: c.correct_risk,
            incorrect: c.incorrect_risk,
            caveat: CLASS_CONDITIONAL_CAVEAT,
        })
        .collect()
}

/// Test-set behaviour of one fixed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub threshold: Threshold,
    pub records: usize,
    /// Mean signed ICL loss.
    pub raw_risk: f64,
    pub helpful: usize,
    pub neutral: usize,
    pub harmful: usize,
    /// Accuracy of the safe predictor.
    pub accuracy: f64,
    pub zero_shot_accuracy: f64,
    /// Accuracy of the demonstration-conditioned final layer.
    pub final_layer_accuracy: f64,
    /// Fraction of records that exit before falling back.
    pub exit_rate: f64,
    pub mean_layers: f64,
    pub mean_layers_with_fallback: f64,
    pub correct_risk: Option<f64>,
    pub incorrect_risk: Option<f64>,
}

pub fn evaluate_policy(records: &[ExampleRecord], policy: &ExitPolicy) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation over an empty record set"));
    }
    let views = build_views(records, policy)?;
    let refs: Vec<&ExitView> = views.iter().collect();
    let t = policy.threshold();
    let (raw_risk, mean_layers, mean_layers_with_fallback, correct_risk, incorrect_risk) =
        evaluate_views(&refs, t);
    let counts = LossCounts::from_losses(views.iter().map(|v| v.icl_loss(t)));
    let n = records.len() as f64;
    let frac = |hits: usize| hits as f64 / n;
    Ok(Evaluation {
        threshold: t,
        records: records.len(),
        raw_risk,
        helpful: counts.helpful,
        neutral: counts.neutral,
        harmful: counts.harmful,
        accuracy: frac(
            views
                .iter()
                .zip(records)
                .filter(|(v, r)| v.predict(t) == r.true_label())
                .count(),
        ),
        zero_shot_accuracy: frac(
            records
                .iter()
                .filter(|r| r.zero_shot_prediction() == r.true_label())
                .count(),
        ),
        final_layer_accuracy: frac(
            records
                .iter()
                .filter(|r| r.effective_trace().last().argmax() == r.true_label())
                .count(),
        ),
        exit_rate: match t {
            Threshold::ZeroShotOnly => 0.0,
            Threshold::Lambda(l) => {
                frac(views.iter().filter(|v| v.exit_layer(l).is_some()).count())
            }
        },
        mean_layers,
        mean_layers_with_fallback,
        correct_risk,
        incorrect_risk,
    })
}

/// [`run_trials`] on the profile at each mix, all with the same config.
pub fn proportion_sweep(
    profile: &SimProfile,
    mixes: &[f64],
    config: &TrialConfig,
) -> Result<Vec<TrialReport>> {
    mixes
        .iter()
        .map(|&mix| {
            let p = profile.clone().with_mix(mix);
            run_trials(TrialSource::Profile(&p), config)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(trials: usize) -> TrialConfig {
        TrialConfig {
            num_trials: trials,
            records_per_trial: 400,
            epsilons: vec![0.1, 0.2],
            seed: 9,
            ..TrialConfig::default()
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let items: Vec<usize> = (0..10).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = split_trial(&items, 0.5, &mut rng).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, items);

        let again = split_trial(&items, 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(again, (a, b));
        assert!(split_trial(&items[..1], 0.5, &mut rng).is_err());
        assert!(split_trial(&items[..2], 0.1, &mut rng).is_err());
        assert!(split_trial(&items, 1.0, &mut rng).is_err());
    }

    #[test]
    fn single_trial_is_degenerate() {
        let r = run_trials(TrialSource::Profile(&SimProfile::default()), &small(1)).unwrap();
        assert!(r.degenerate);
        assert!(r.cells.iter().all(|c| c.std_error == 0.0));
        assert_eq!(r.cells.len(), 4);
    }

    #[test]
    fn sentinel_only_grid_has_zero_test_risk() {
        let records = simulate_dataset(&SimProfile::default(), 300, 4).unwrap();
        let config = TrialConfig {
            grid_points: 0,
            ..small(5)
        };
        let r = run_trials(TrialSource::Records(&records), &config).unwrap();
        for c in &r.cells {
            assert_eq!(c.mean_test_risk, 0.0);
            assert_eq!(c.sentinel_rate, 1.0);
            assert_eq!(c.mean_lambda_hat, None);
            assert!(c
                .trials
                .iter()
                .all(|t| t.test_risk == 0.0 && t.mean_layers == 0.0));
        }
    }

    #[test]
    fn reports_are_reproducible() {
        let p = SimProfile::default();
        let a = run_trials(TrialSource::Profile(&p), &small(3)).unwrap();
        let b = run_trials(TrialSource::Profile(&p), &small(3)).unwrap();
        assert_eq!(a, b);
        let c = run_trials(
            TrialSource::Profile(&p),
            &TrialConfig {
                seed: 10,
                ..small(3)
            },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn record_source_resamples_only_the_split() {
        let records = simulate_dataset(&SimProfile::default(), 200, 4).unwrap();
        let r = run_trials(TrialSource::Records(&records), &small(4)).unwrap();
        let ids: std::collections::HashSet<_> =
            r.cells[0].trials.iter().map(|t| &t.split_id).collect();
        assert_eq!(ids.len(), 4);
        assert!(r.source.starts_with("records:200:"));
        assert_eq!(r.first_exit_layer, 16);
    }

    #[test]
    fn efficiency_needs_shared_splits_and_both_modes() {
        let p = SimProfile::default();
        let mut r = run_trials(TrialSource::Profile(&p), &small(2)).unwrap();
        let rows = efficiency_report(&r).unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert_eq!(row.num_trials, 2);
        }
        r.cells[0].trials[0].split_id = "other".into();
        assert!(matches!(efficiency_report(&r), Err(Error::Protocol(_))));

        let scaled_only = TrialConfig {
            modes: vec![LossMode::Scaled],
            ..small(1)
        };
        let r = run_trials(TrialSource::Profile(&p), &scaled_only).unwrap();
        assert!(efficiency_report(&r).is_err());
    }

    #[test]
    fn identical_selections_save_nothing() {
        let p = SimProfile::default();
        let config = TrialConfig {
            records_per_trial: 4000,
            ..small(2)
        };
        let mut r = run_trials(TrialSource::Profile(&p), &config).unwrap();
        let scaled = r.cells[0].clone();
        r.cells[1].trials = scaled.trials.clone();
        r.cells[1].mean_layers = scaled.mean_layers;
        r.cells[1].mean_layers_with_fallback = scaled.mean_layers_with_fallback;
        let row = &efficiency_report(&r).unwrap()[0];
        assert_eq!(row.savings, Some(0.0));
        assert_eq!(row.trials_differing, 0);
    }

    #[test]
    fn correct_only_mix_leaves_incorrect_kind_undefined() {
        let p = SimProfile::default().with_mix(1.0);
        let r = run_trials(TrialSource::Profile(&p), &small(2)).unwrap();
        for row in class_conditional_report(&r) {
            assert!(row.correct.is_some());
            assert_eq!(row.incorrect, None);
            assert_eq!(row.caveat, CLASS_CONDITIONAL_CAVEAT);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let p = SimProfile::default();
        let bad = |c: TrialConfig| assert!(run_trials(TrialSource::Profile(&p), &c).is_err());
        bad(TrialConfig {
            num_trials: 0,
            ..small(1)
        });
        bad(TrialConfig {
            calibration_fraction: 0.0,
            ..small(1)
        });
        bad(TrialConfig {
            epsilons: vec![],
            ..small(1)
        });
        bad(TrialConfig {
            epsilons: vec![1.0],
            ..small(1)
        });
        bad(TrialConfig {
            epsilons: vec![-0.2],
            ..small(1)
        });
        bad(TrialConfig {
            delta: 1.0,
            ..small(1)
        });
        bad(TrialConfig {
            first_exit_layer: Some(40),
            ..small(1)
        });
        bad(TrialConfig {
            grid_points: 1,
            ..small(1)
        });
        bad(TrialConfig {
            records_per_trial: 1,
            ..small(1)
        });
        assert!(run_trials(TrialSource::Records(&[]), &small(1)).is_err());
    }

    #[test]
    fn discrete_profiles_report_violation_rates() {
        let d = DiscreteProfile::default();
        let r = run_trials(TrialSource::Profile(&d), &small(3)).unwrap();
        assert!(r.cells.iter().all(|c| c.violation_rate.is_some()));
        let g = run_trials(TrialSource::Profile(&SimProfile::default()), &small(1)).unwrap();
        assert!(g.cells.iter().all(|c| c.violation_rate.is_none()));
    }

    #[test]
    fn evaluation_of_the_sentinel() {
        let records = simulate_dataset(&SimProfile::default(), 500, 2).unwrap();
        let policy = ExitPolicy::zero_shot_only(16, ConfidenceMeasure::Argmax).unwrap();
        let e = evaluate_policy(&records, &policy).unwrap();
        assert_eq!(e.raw_risk, 0.0);
        assert_eq!((e.helpful, e.harmful, e.neutral), (0, 0, 500));
        assert_eq!(e.accuracy, e.zero_shot_accuracy);
        assert_eq!(e.exit_rate, 0.0);
        assert_eq!(e.mean_layers, 0.0);
        assert_eq!(e.mean_layers_with_fallback, 32.0);

        let eager = evaluate_policy(
            &records,
            &policy.with_threshold(Threshold::Lambda(0.0)).unwrap(),
        )
        .unwrap();
        assert_eq!(eager.exit_rate, 1.0);
        assert_eq!(eager.mean_layers, 16.0);
        assert!((eager.raw_risk - (eager.zero_shot_accuracy - eager.accuracy)).abs() < 1e-12);
        assert!(evaluate_policy(&[], &policy).is_err());
    }

    #[test]
    fn sweep_gives_one_report_per_mix() {
        let reports =
            proportion_sweep(&SimProfile::default(), &[0.9, 0.5, 0.1], &small(1)).unwrap();
        assert_eq!(reports.len(), 3);
        assert_ne!(reports[0].source, reports[2].source);
    }
}
