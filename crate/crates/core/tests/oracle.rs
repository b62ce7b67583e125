use icl_guard::sim::{
    oracle_icl_risk, oracle_loss_laws, oracle_risk, oracle_risk_mc, simulate_dataset,
    DiscreteProfile,
};
use icl_guard::{
    empirical_icl_risk, ConfidenceMeasure, ExitPolicy, LambdaGrid, LossMode, LossSpec,
};

fn policy(lambda: f64) -> ExitPolicy {
    ExitPolicy::lambda(lambda, 16, ConfidenceMeasure::Argmax).unwrap()
}

#[test]
fn golden_risks_of_the_default_profile() {
    let profile = DiscreteProfile::default();
    assert_eq!(profile.fingerprint(), "e2946cb4a590c503");
    let p = policy(0.8);
    let icl = oracle_icl_risk(&profile, &p).unwrap();
    let scaled = oracle_risk(&profile, &p, &LossSpec::classification(LossMode::Scaled)).unwrap();
    let clipped = oracle_risk(&profile, &p, &LossSpec::classification(LossMode::Clipped)).unwrap();
    assert!((icl - 0.06875).abs() < 1e-12, "{icl}");
    assert!((scaled - 0.534375).abs() < 1e-12, "{scaled}");
    assert!((clipped - 0.21875).abs() < 1e-12, "{clipped}");
}

#[test]
fn monte_carlo_agrees_with_enumeration() {
    let profile = DiscreteProfile::default();
    for mode in LossMode::ALL {
        let spec = LossSpec::classification(mode);
        let exact = oracle_risk(&profile, &policy(0.8), &spec).unwrap();
        let mc = oracle_risk_mc(&profile, &policy(0.8), &spec, 1_000_000, 11).unwrap();
        assert_eq!(mc.samples, 1_000_000);
        assert!(
            (mc.mean - exact).abs() <= 4.0 * mc.std_error,
            "{mode}: MC {} +- {} vs exact {exact}",
            mc.mean,
            mc.std_error
        );
    }
}

#[test]
fn monte_carlo_error_shrinks_as_root_n() {
    let profile = DiscreteProfile::default();
    let spec = LossSpec::classification(LossMode::Scaled);
    let small = oracle_risk_mc(&profile, &policy(0.8), &spec, 40_000, 5).unwrap();
    let large = oracle_risk_mc(&profile, &policy(0.8), &spec, 160_000, 5).unwrap();
    let ratio = small.std_error / large.std_error;
    assert!((ratio - 2.0).abs() <= 0.4, "SE ratio {ratio}");
}

#[test]
fn empirical_curve_converges_to_the_exact_curve() {
    let profile = DiscreteProfile::default();
    let records = simulate_dataset(&profile, 50_000, 3).unwrap();
    let candidates = LambdaGrid::evenly_spaced(11).unwrap().candidates();
    let laws = oracle_loss_laws(&profile, &policy(1.0), &candidates).unwrap();
    for (t, law) in candidates.iter().zip(&laws) {
        let p = policy(1.0).with_threshold(*t).unwrap();
        let emp = empirical_icl_risk(&records, &p).unwrap();
        // Loss variance is at most 1, so 5 SE is below 0.0225.
        assert!(
            (emp - law.icl_risk()).abs() < 0.0225,
            "{t}: {emp} vs {}",
            law.icl_risk()
        );
    }
}

#[test]
fn oracle_rejects_profiles_too_large_to_enumerate() {
    let mut p = DiscreteProfile::default().profile().clone();
    p.num_classes = 200_000;
    p.label_permutation = (0..200_000).map(|i| (i + 1) % 200_000).collect();
    let err = DiscreteProfile::new(p).unwrap_err().to_string();
    assert!(err.contains("enumeration cap"), "{err}");
}
