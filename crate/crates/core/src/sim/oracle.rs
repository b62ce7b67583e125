//! Ground-truth risk: exhaustive enumeration for discrete profiles and a
//! Monte-Carlo estimate for any profile.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cascade::{ContextKind, ExitPolicy, ExitView, Threshold};
use crate::error::{Error, Result};
use crate::loss::{LossCounts, LossMode, LossSpec};
use crate::sim::generate::Simulator;
use crate::sim::profile::{DiscreteProfile, SimProfile};

/// Exact law of the ICL loss under one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossLaw {
    /// `P(loss = -1)`
    pub helpful: f64,
    /// `P(loss = +1)`
    pub harmful: f64,
}

impl LossLaw {
    /// Expected signed ICL loss.
    pub fn icl_risk(&self) -> f64 {
        self.harmful - self.helpful
    }

    /// Expected mode-selected loss.
    pub fn risk(&self, spec: &LossSpec) -> f64 {
        match spec.mode() {
            LossMode::Scaled => (self.icl_risk() - spec.lower()) / (spec.upper() - spec.lower()),
            LossMode::Clipped => self.harmful,
        }
    }
}

/// One point of the outcome space with its probability.
struct Atom {
    weight: f64,
    view: ExitView,
}

fn atoms(profile: &DiscreteProfile, template: &ExitPolicy) -> Result<Vec<Atom>> {
    let sim = Simulator::new(profile)?;
    let p = profile.profile();
    let k = p.num_classes;
    let mut out = Vec::with_capacity(profile.atom_count());
    for (kind, kind_weight) in [
        (ContextKind::Correct, p.mix),
        (ContextKind::Incorrect, 1.0 - p.mix),
    ] {
        for variant in 0..p.noise_variants {
            for label in 0..k {
                // only whether zero-shot is right matters to the loss
                for (zs_class, zs_weight) in [
                    (label, p.zero_shot_accuracy),
                    ((label + 1) % k, 1.0 - p.zero_shot_accuracy),
                ] {
                    let weight = kind_weight * zs_weight / (p.noise_variants * k) as f64;
                    let record = sim.assemble(
                        format!("atom-{kind:?}-{variant}-{label}-{zs_class}"),
                        kind,
                        label,
                        sim.path(kind, variant),
                        zs_class,
                    )?;
                    let view =
                        ExitView::new(&record, template.first_exit_layer(), template.confidence())?;
                    out.push(Atom { weight, view });
                }
            }
        }
    }
    Ok(out)
}

fn law(atoms: &[Atom], threshold: Threshold) -> LossLaw {
    let mut law = LossLaw {
        helpful: 0.0,
        harmful: 0.0,
    };
    for a in atoms {
        match a.view.icl_loss(threshold) {
            -1 => law.helpful += a.weight,
            1 => law.harmful += a.weight,
            _ => {}
        }
    }
    law
}

/// Exact loss law at each threshold, enumerating every atom once.
pub fn oracle_loss_laws(
    profile: &DiscreteProfile,
    template: &ExitPolicy,
    thresholds: &[Threshold],
) -> Result<Vec<LossLaw>> {
    let atoms = atoms(profile, template)?;
    Ok(thresholds.iter().map(|&t| law(&atoms, t)).collect())
}

/// Exact expected ICL loss of a policy.
pub fn oracle_icl_risk(profile: &DiscreteProfile, policy: &ExitPolicy) -> Result<f64> {
    Ok(oracle_loss_laws(profile, policy, &[policy.threshold()])?[0].icl_risk())
}

/// Exact expected mode-selected loss of a policy.
pub fn oracle_risk(profile: &DiscreteProfile, policy: &ExitPolicy, spec: &LossSpec) -> Result<f64> {
    Ok(oracle_loss_laws(profile, policy, &[policy.threshold()])?[0].risk(spec))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

pub const MIN_MC_SAMPLES: usize = 10_000;

/// Monte-Carlo estimate of the expected mode-selected loss.
pub fn oracle_risk_mc(
    profile: &SimProfile,
    policy: &ExitPolicy,
    spec: &LossSpec,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples < MIN_MC_SAMPLES {
        return Err(Error::Config(format!(
            "Monte-Carlo risk needs at least {MIN_MC_SAMPLES} samples, got {n_samples}"
        )));
    }
    let sim = Simulator::new(profile)?;
    let counts = (0..n_samples)
        .into_par_iter()
        .map(|i| -> Result<LossCounts> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let record = sim.record(&mut rng, String::new())?;
            let view = ExitView::new(&record, policy.first_exit_layer(), policy.confidence())?;
            Ok(LossCounts::from_losses([view.icl_loss(policy.threshold())]))
        })
        .try_reduce(LossCounts::default, |a, b| {
            Ok(LossCounts {
                helpful: a.helpful + b.helpful,
                neutral: a.neutral + b.neutral,
                harmful: a.harmful + b.harmful,
            })
        })?;
    // loss values per outcome on the mode's scale
    let value = |v: f64| match spec.mode() {
        LossMode::Scaled => (v - spec.lower()) / (spec.upper() - spec.lower()),
        LossMode::Clipped => v.max(0.0),
    };
    let n = n_samples as f64;
    let outcomes = [
        (counts.helpful as f64, value(-1.0)),
        (counts.neutral as f64, value(0.0)),
        (counts.harmful as f64, value(1.0)),
    ];
    let mean = outcomes.iter().map(|(c, v)| c * v).sum::<f64>() / n;
    let var = outcomes
        .iter()
        .map(|(c, v)| c * (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1.0);
    Ok(McEstimate {
        mean,
        std_error: (var / n).sqrt(),
        samples: n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::ConfidenceMeasure;

    fn policy(t: Threshold) -> ExitPolicy {
        ExitPolicy::new(t, 16, ConfidenceMeasure::Argmax).unwrap()
    }

    #[test]
    fn sentinel_risk_is_exactly_zero() {
        let d = DiscreteProfile::default();
        assert_eq!(
            oracle_icl_risk(&d, &policy(Threshold::ZeroShotOnly)).unwrap(),
            0.0
        );
        let scaled = LossSpec::classification(LossMode::Scaled);
        assert_eq!(
            oracle_risk(&d, &policy(Threshold::ZeroShotOnly), &scaled).unwrap(),
            0.5
        );
        let mc = oracle_risk_mc(&d, &policy(Threshold::ZeroShotOnly), &scaled, 10_000, 1).unwrap();
        assert_eq!(mc.mean, 0.5);
        assert_eq!(mc.std_error, 0.0);
    }

    #[test]
    fn always_right_profile_has_zero_risk() {
        let d = DiscreteProfile::new(SimProfile {
            noise_amplitude: 0.0,
            mix: 1.0,
            zero_shot_accuracy: 1.0,
            signal_schedule: vec![5.0; 32],
            noise_model: crate::sim::NoiseModel::Discrete,
            ..SimProfile::default()
        })
        .unwrap();
        assert_eq!(
            oracle_icl_risk(&d, &policy(Threshold::Lambda(0.0))).unwrap(),
            0.0
        );
    }

    #[test]
    fn too_few_mc_samples() {
        let scaled = LossSpec::classification(LossMode::Scaled);
        assert!(oracle_risk_mc(
            &SimProfile::default(),
            &policy(Threshold::Lambda(0.5)),
            &scaled,
            100,
            1
        )
        .is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        let d = DiscreteProfile::default().with_mix(0.3).unwrap();
        let atoms = atoms(&d, &policy(Threshold::Lambda(0.5))).unwrap();
        assert_eq!(atoms.len(), d.atom_count());
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
