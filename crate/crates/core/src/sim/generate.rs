use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cascade::{ContextKind, ExampleRecord, LayerTrace, ProbVector};
use crate::error::{Error, Result};
use crate::sim::profile::{NoiseModel, SimProfile};

/// Record generator for one validated profile.
///
/// Noise vectors are indexed relative to the true label (entry `j` perturbs
/// class `y + j mod K`), so every label sees the same noise law.
#[derive(Debug, Clone)]
pub struct Simulator {
    profile: SimProfile,
    /// `[correct, incorrect]` fixed paths for the discrete model, each
    /// `L * K` values, row-major by layer.
    paths: [Vec<Vec<f64>>; 2],
    content_free: ProbVector,
}

fn kind_index(kind: ContextKind) -> usize {
    match kind {
        ContextKind::Correct => 0,
        ContextKind::Incorrect => 1,
    }
}

impl Simulator {
    pub fn new(profile: &SimProfile) -> Result<Self> {
        profile.validate()?;
        let width = profile.num_layers * profile.num_classes;
        let paths = match profile.noise_model {
            NoiseModel::Gaussian => [Vec::new(), Vec::new()],
            NoiseModel::Discrete => {
                let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
                let mut draw = || -> Vec<Vec<f64>> {
                    (0..profile.noise_variants)
                        .map(|_| (0..width).map(|_| rng.sample(StandardNormal)).collect())
                        .collect()
                };
                let correct = draw();
                let incorrect = draw();
                [correct, incorrect]
            }
        };
        let mut skew = vec![0.0; profile.num_classes];
        skew[0] = profile.content_free_skew;
        Ok(Simulator {
            profile: profile.clone(),
            paths,
            content_free: ProbVector::from_scores(&skew)?,
        })
    }

    pub fn profile(&self) -> &SimProfile {
        &self.profile
    }

    pub(crate) fn path(&self, kind: ContextKind, variant: usize) -> &[f64] {
        &self.paths[kind_index(kind)][variant]
    }

    /// Signal added to the true class and, after corruption, to the
    /// permuted class.
    fn signals(
        &self,
        kind: ContextKind,
        label: usize,
        layer: usize,
    ) -> (f64, Option<(usize, f64)>) {
        let p = &self.profile;
        let s = p.signal_schedule[layer - 1];
        match kind {
            ContextKind::Incorrect if layer >= p.onset_layer => (
                s * p.retained_signal_scale,
                Some((p.label_permutation[label], s * p.harmful_signal_scale)),
            ),
            _ => (s, None),
        }
    }

    /// Multiply by the content-free distribution and renormalize, the bias
    /// that contextual calibration removes.
    fn bias(&self, p: ProbVector) -> Result<ProbVector> {
        if self.profile.content_free_skew == 0.0 {
            return Ok(p);
        }
        let w: Vec<f64> = p
            .as_slice()
            .iter()
            .zip(self.content_free.as_slice())
            .map(|(a, b)| a * b)
            .collect();
        let total: f64 = w.iter().sum();
        ProbVector::new(w.into_iter().map(|x| x / total).collect())
    }

    /// Demonstration-conditioned trace for a label under a noise path.
    pub fn build_trace(
        &self,
        kind: ContextKind,
        label: usize,
        noise: &[f64],
    ) -> Result<LayerTrace> {
        let p = &self.profile;
        let k = p.num_classes;
        let mut layers = Vec::with_capacity(p.num_layers);
        let mut scores = vec![0.0; k];
        for layer in 1..=p.num_layers {
            let row = &noise[(layer - 1) * k..layer * k];
            for (j, &e) in row.iter().enumerate() {
                scores[(label + j) % k] = p.noise_amplitude * e;
            }
            let (own, corrupt) = self.signals(kind, label, layer);
            scores[label] += own;
            if let Some((target, signal)) = corrupt {
                scores[target] += signal;
            }
            layers.push(self.bias(ProbVector::from_scores(&scores)?)?);
        }
        LayerTrace::new(layers)
    }

    pub fn build_zero_shot(&self, predicted: usize) -> Result<ProbVector> {
        let mut scores = vec![0.0; self.profile.num_classes];
        scores[predicted] = self.profile.zero_shot_sharpness;
        self.bias(ProbVector::from_scores(&scores)?)
    }

    /// Assemble a record from its latent draws.
    pub fn assemble(
        &self,
        id: String,
        kind: ContextKind,
        label: usize,
        noise: &[f64],
        zero_shot_prediction: usize,
    ) -> Result<ExampleRecord> {
        let p = &self.profile;
        let cf_trace = LayerTrace::new(vec![self.content_free.clone(); p.num_layers])?;
        ExampleRecord::new(
            id,
            p.dataset_name.clone(),
            kind,
            label,
            self.build_trace(kind, label, noise)?,
            self.build_zero_shot(zero_shot_prediction)?,
            Some(cf_trace),
            Some(self.content_free.clone()),
        )
    }

    /// Draw one record. Draw order: label, context kind, noise, zero-shot
    /// correctness, zero-shot wrong class.
    pub fn record<R: Rng + ?Sized>(&self, rng: &mut R, id: String) -> Result<ExampleRecord> {
        let p = &self.profile;
        let k = p.num_classes;
        let label = rng.random_range(0..k);
        let kind = if rng.random_bool(p.mix) {
            ContextKind::Correct
        } else {
            ContextKind::Incorrect
        };
        let fresh;
        let noise: &[f64] = match p.noise_model {
            NoiseModel::Gaussian => {
                fresh = (0..p.num_layers * k)
                    .map(|_| rng.sample(StandardNormal))
                    .collect::<Vec<f64>>();
                &fresh
            }
            NoiseModel::Discrete => {
                let v = rng.random_range(0..p.noise_variants);
                self.path(kind, v)
            }
        };
        let zero_shot_prediction = if rng.random_bool(p.zero_shot_accuracy) {
            label
        } else {
            (label + rng.random_range(1..k)) % k
        };
        self.assemble(id, kind, label, noise, zero_shot_prediction)
    }

    /// `n` records; record `i` uses stream `i` of a ChaCha8 generator seeded
    /// with `seed`, so output is independent of thread scheduling.
    pub fn dataset(&self, n: usize, seed: u64) -> Result<Vec<ExampleRecord>> {
        if n == 0 {
            return Err(Error::Config("dataset size must be at least 1".into()));
        }
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                self.record(&mut rng, format!("{}-{i:06}", self.profile.dataset_name))
            })
            .collect()
    }
}

pub fn simulate_record<R: Rng + ?Sized>(
    profile: &SimProfile,
    rng: &mut R,
) -> Result<ExampleRecord> {
    Simulator::new(profile)?.record(rng, format!("{}-000000", profile.dataset_name))
}

pub fn simulate_dataset(profile: &SimProfile, n: usize, seed: u64) -> Result<Vec<ExampleRecord>> {
    Simulator::new(profile)?.dataset(n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::profile::DiscreteProfile;

    fn noiseless() -> SimProfile {
        SimProfile {
            noise_amplitude: 0.0,
            signal_schedule: SimProfile::linear_schedule(32, 12.0),
            ..SimProfile::default()
        }
    }

    #[test]
    fn mix_one_gives_correct_context_only() {
        let p = SimProfile::default().with_mix(1.0);
        let data = simulate_dataset(&p, 200, 3).unwrap();
        assert!(data
            .iter()
            .all(|r| r.context_kind() == ContextKind::Correct));
    }

    #[test]
    fn noiseless_final_layer_follows_the_target() {
        let p = noiseless();
        let sim = Simulator::new(&p).unwrap();
        let zeros = vec![0.0; 32 * 4];
        for y in 0..4 {
            let good = sim.build_trace(ContextKind::Correct, y, &zeros).unwrap();
            assert_eq!(good.last().argmax(), y);
            let bad = sim.build_trace(ContextKind::Incorrect, y, &zeros).unwrap();
            assert_eq!(bad.last().argmax(), p.label_permutation[y]);
            assert_ne!(bad.last().argmax(), y);
            assert_eq!(bad.layer(p.onset_layer - 1).argmax(), y);
        }
    }

    #[test]
    fn datasets_are_reproducible() {
        let p = SimProfile::default();
        assert_eq!(
            simulate_dataset(&p, 10, 7).unwrap(),
            simulate_dataset(&p, 10, 7).unwrap()
        );
        assert_ne!(
            simulate_dataset(&p, 10, 7).unwrap(),
            simulate_dataset(&p, 10, 8).unwrap()
        );
        assert_eq!(simulate_dataset(&p, 1, 7).unwrap().len(), 1);
        assert!(simulate_dataset(&p, 0, 7).is_err());
    }

    #[test]
    fn prefix_of_a_larger_dataset_is_the_smaller_dataset() {
        let p = SimProfile::default();
        let small = simulate_dataset(&p, 5, 11).unwrap();
        let large = simulate_dataset(&p, 50, 11).unwrap();
        assert_eq!(&large[..5], &small[..]);
    }

    #[test]
    fn correct_fraction_concentrates() {
        let n = 10_000;
        let data = simulate_dataset(&SimProfile::default(), n, 2024).unwrap();
        let frac = data
            .iter()
            .filter(|r| r.context_kind() == ContextKind::Correct)
            .count() as f64
            / n as f64;
        assert!(
            (frac - 0.5).abs() <= 3.0 * (0.25 / n as f64).sqrt(),
            "fraction {frac}"
        );
    }

    #[test]
    fn discrete_records_use_fixed_paths() {
        let d = DiscreteProfile::default();
        let sim = Simulator::new(&d).unwrap();
        let data = sim.dataset(300, 1).unwrap();
        let distinct: std::collections::HashSet<String> = data
            .iter()
            .filter(|r| r.true_label() == 0 && r.context_kind() == ContextKind::Correct)
            .map(|r| format!("{:?}", r.icl_trace().last().as_slice()))
            .collect();
        assert!(distinct.len() <= d.noise_variants);
    }

    #[test]
    fn skewed_content_free_traces_are_removed_by_calibration() {
        let p = SimProfile {
            content_free_skew: 1.5,
            ..SimProfile::default()
        };
        let unbiased = Simulator::new(&SimProfile::default()).unwrap();
        let biased = Simulator::new(&p).unwrap();
        let noise: Vec<f64> = (0..32 * 4)
            .map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5)
            .collect();
        let clean = unbiased
            .assemble("a".into(), ContextKind::Correct, 2, &noise, 2)
            .unwrap();
        let skewed = biased
            .assemble("a".into(), ContextKind::Correct, 2, &noise, 2)
            .unwrap();
        assert_ne!(clean.icl_trace(), skewed.icl_trace());
        for (a, b) in clean
            .effective_trace()
            .layers()
            .iter()
            .zip(skewed.effective_trace().layers())
        {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
