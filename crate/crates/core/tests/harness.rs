use icl_guard::harness::{
    class_conditional_report, efficiency_report, evaluate_policy, proportion_sweep, run_trials,
    TrialConfig, TrialSource, CLASS_CONDITIONAL_CAVEAT,
};
use icl_guard::sim::{simulate_dataset, DiscreteProfile, SimProfile};
use icl_guard::{ConfidenceMeasure, ExitPolicy, LossMode, Threshold};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn seeded_default_run_is_frozen() {
    let profile = DiscreteProfile::default();
    assert_eq!(profile.fingerprint(), "e2946cb4a590c503");
    let config = TrialConfig {
        seed: 20240611,
        ..TrialConfig::default()
    };
    let report = run_trials(TrialSource::Profile(&profile), &config).unwrap();
    assert_eq!(report.source, "profile:e2946cb4a590c503");

    let rows = efficiency_report(&report).unwrap();
    let first = &rows[0];
    assert_eq!(first.epsilon, 0.05);
    assert!(close(first.savings.unwrap(), 0.033291969979495344));
    assert!(close(
        first.savings_with_fallback.unwrap(),
        0.10704592778270645
    ));

    let kinds = class_conditional_report(&report);
    let at = |mode| {
        kinds
            .iter()
            .find(|r| r.epsilon == 0.05 && r.mode == mode)
            .unwrap()
    };
    let scaled = at(LossMode::Scaled);
    assert!(close(scaled.correct.unwrap(), -0.30205493862622024));
    assert!(close(scaled.incorrect.unwrap(), 0.18353178428108252));
    let clipped = at(LossMode::Clipped);
    assert!(close(clipped.correct.unwrap(), -0.30205493862622024));
    assert!(close(clipped.incorrect.unwrap(), 0.015239064689615866));
    assert!(kinds.iter().all(|r| r.caveat == CLASS_CONDITIONAL_CAVEAT));
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let profile = DiscreteProfile::default();
    let config = TrialConfig {
        num_trials: 6,
        records_per_trial: 500,
        seed: 4,
        ..TrialConfig::default()
    };
    let parallel = run_trials(TrialSource::Profile(&profile), &config).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let serial = pool.install(|| run_trials(TrialSource::Profile(&profile), &config).unwrap());
    assert_eq!(parallel, serial);
}

#[test]
fn all_correct_demonstrations_never_hurt_on_average() {
    let profile = SimProfile::default();
    let config = TrialConfig {
        num_trials: 40,
        records_per_trial: 1000,
        seed: 12,
        ..TrialConfig::default()
    };
    let reports = proportion_sweep(&profile, &[1.0], &config).unwrap();
    for cell in &reports[0].cells {
        assert!(
            cell.mean_test_risk <= 0.0,
            "{} {}: {}",
            cell.epsilon,
            cell.mode,
            cell.mean_test_risk
        );
        assert_eq!(cell.violation_rate, None);
        assert_eq!(cell.incorrect_risk, None);
    }
}

#[test]
fn fixed_record_sets_resample_only_the_split() {
    let records = simulate_dataset(&SimProfile::default(), 800, 5).unwrap();
    let config = TrialConfig {
        num_trials: 10,
        epsilons: vec![0.1],
        seed: 1,
        ..TrialConfig::default()
    };
    let report = run_trials(TrialSource::Records(&records), &config).unwrap();
    assert!(report.source.starts_with("records:800:"));
    assert_eq!(report.first_exit_layer, 16);
    let cell = report.cell(0.1, LossMode::Scaled).unwrap();
    assert_eq!(cell.violation_rate, None);
    assert!(cell.trials.iter().all(|t| t.oracle_risk.is_none()));
    let mut ids: Vec<_> = cell.trials.iter().map(|t| t.split_id.clone()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 10);
}

#[test]
fn efficiency_needs_both_modes() {
    let config = TrialConfig {
        num_trials: 2,
        records_per_trial: 200,
        modes: vec![LossMode::Scaled],
        ..TrialConfig::default()
    };
    let report = run_trials(TrialSource::Profile(&SimProfile::default()), &config).unwrap();
    assert!(efficiency_report(&report).is_err());
}

#[test]
fn single_trial_is_flagged_degenerate() {
    let config = TrialConfig {
        num_trials: 1,
        records_per_trial: 200,
        ..TrialConfig::default()
    };
    let report = run_trials(TrialSource::Profile(&SimProfile::default()), &config).unwrap();
    assert!(report.degenerate);
    assert!(report.cells.iter().all(|c| c.std_error == 0.0));
}

#[test]
fn evaluation_counts_add_up() {
    let records = simulate_dataset(&SimProfile::default(), 1000, 8).unwrap();
    let policy = ExitPolicy::lambda(0.9, 16, ConfidenceMeasure::Argmax).unwrap();
    let e = evaluate_policy(&records, &policy).unwrap();
    assert_eq!(e.helpful + e.neutral + e.harmful, 1000);
    assert!(close(
        e.raw_risk,
        (e.harmful as f64 - e.helpful as f64) / 1000.0
    ));
    assert!(close(e.accuracy - e.zero_shot_accuracy, -e.raw_risk));
    assert!(e.mean_layers >= 16.0 && e.mean_layers <= 32.0);
    assert!(e.mean_layers_with_fallback >= e.mean_layers);

    let sentinel = evaluate_policy(
        &records,
        &policy.with_threshold(Threshold::ZeroShotOnly).unwrap(),
    )
    .unwrap();
    assert_eq!(
        (sentinel.raw_risk, sentinel.exit_rate, sentinel.mean_layers),
        (0.0, 0.0, 0.0)
    );
    assert_eq!(sentinel.mean_layers_with_fallback, 32.0);
}
