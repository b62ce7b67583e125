use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PROFILE_FORMAT_VERSION: u32 = 1;

/// Most noise variants a discrete profile may carry per context kind.
pub const MAX_DISCRETE_VARIANTS: usize = 8;

/// Largest outcome space the exact oracle will enumerate.
pub const MAX_ORACLE_ATOMS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// Fresh standard-normal perturbations per layer and class.
    Gaussian,
    /// Each record draws one of a few fixed perturbation paths, chosen
    /// uniformly; the paths are derived from the profile seed.
    Discrete,
}

/// Parametric generator of synthetic cascade traces.
///
/// Layer `l` of a record with label `y` has log-scores
/// `s_l * [k == target_l] + amplitude * noise_l(k - y mod K)`, where the
/// target is `y` throughout for correct demonstrations and switches to
/// `label_permutation[y]` from `onset_layer` on for incorrect ones. After
/// the switch the permuted class receives `harmful_signal_scale * s_l` and
/// the true class keeps `retained_signal_scale * s_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimProfile {
    pub format_version: u32,
    pub dataset_name: String,
    pub num_layers: usize,
    pub num_classes: usize,
    pub first_exit_layer: usize,
    /// Probability that a record's demonstrations are correct.
    pub mix: f64,
    pub onset_layer: usize,
    pub signal_schedule: Vec<f64>,
    pub harmful_signal_scale: f64,
    pub retained_signal_scale: f64,
    pub zero_shot_accuracy: f64,
    /// Log-score margin of the zero-shot prediction.
    pub zero_shot_sharpness: f64,
    /// Derangement applied to labels by incorrect demonstrations.
    pub label_permutation: Vec<usize>,
    pub noise_model: NoiseModel,
    pub noise_amplitude: f64,
    /// Paths per context kind for the discrete noise model.
    pub noise_variants: usize,
    /// Log-score bias of the content-free distribution towards class 0;
    /// 0 gives uniform content-free traces.
    pub content_free_skew: f64,
    /// Seeds the fixed noise paths of the discrete model.
    pub seed: u64,
}

impl Default for SimProfile {
    fn default() -> Self {
        let num_layers = 32;
        SimProfile {
            format_version: PROFILE_FORMAT_VERSION,
            dataset_name: "synthetic".into(),
            num_layers,
            num_classes: 4,
            first_exit_layer: 16,
            mix: 0.5,
            onset_layer: 18,
            signal_schedule: Self::piecewise_schedule(
                num_layers,
                &[(1, 0.0), (16, 0.85), (17, 0.85), (32, 3.5)],
            ),
            harmful_signal_scale: 1.0,
            retained_signal_scale: 0.8,
            zero_shot_accuracy: 0.7,
            zero_shot_sharpness: 2.0,
            label_permutation: Self::cyclic_shift(4),
            noise_model: NoiseModel::Gaussian,
            noise_amplitude: 0.5,
            noise_variants: MAX_DISCRETE_VARIANTS,
            content_free_skew: 0.0,
            seed: 11,
        }
    }
}

impl SimProfile {
    /// `max_signal * (l - 1) / (L - 1)` for `l = 1..=L`.
    pub fn linear_schedule(num_layers: usize, max_signal: f64) -> Vec<f64> {
        Self::power_schedule(num_layers, max_signal, 1.0)
    }

    /// `max_signal * ((l - 1) / (L - 1))^power` for `l = 1..=L`.
    pub fn power_schedule(num_layers: usize, max_signal: f64, power: f64) -> Vec<f64> {
        let span = (num_layers.max(2) - 1) as f64;
        (0..num_layers)
            .map(|i| max_signal * (i as f64 / span).powf(power))
            .collect()
    }

    /// Linear interpolation through `(layer, signal)` knots with 1-based,
    /// increasing layers; flat before the first knot and after the last.
    pub fn piecewise_schedule(num_layers: usize, knots: &[(usize, f64)]) -> Vec<f64> {
        assert!(!knots.is_empty(), "a schedule needs at least one knot");
        (1..=num_layers)
            .map(|l| {
                let after = knots.iter().position(|&(k, _)| k >= l);
                match after {
                    None => knots[knots.len() - 1].1,
                    Some(0) => knots[0].1,
                    Some(i) => {
                        let ((l0, s0), (l1, s1)) = (knots[i - 1], knots[i]);
                        s0 + (s1 - s0) * (l - l0) as f64 / (l1 - l0) as f64
                    }
                }
            })
            .collect()
    }

    /// `y -> y + 1 mod K`.
    pub fn cyclic_shift(num_classes: usize) -> Vec<usize> {
        (0..num_classes).map(|y| (y + 1) % num_classes).collect()
    }

    pub fn with_mix(mut self, mix: f64) -> Self {
        self.mix = mix;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("profile: {msg}")));
        if self.format_version != PROFILE_FORMAT_VERSION {
            return fail(format!(
                "format_version {} is not supported (expected {PROFILE_FORMAT_VERSION})",
                self.format_version
            ));
        }
        if self.num_layers < 2 {
            return fail(format!(
                "num_layers must be at least 2, got {}",
                self.num_layers
            ));
        }
        if self.num_classes < 2 {
            return fail(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            ));
        }
        if !(1 <= self.first_exit_layer
            && self.first_exit_layer <= self.onset_layer
            && self.onset_layer <= self.num_layers)
        {
            return fail(format!(
                "need 1 <= first_exit_layer ({}) <= onset_layer ({}) <= num_layers ({})",
                self.first_exit_layer, self.onset_layer, self.num_layers
            ));
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return fail(format!("mix {} is outside [0, 1]", self.mix));
        }
        if !(0.0..=1.0).contains(&self.zero_shot_accuracy) {
            return fail(format!(
                "zero_shot_accuracy {} is outside [0, 1]",
                self.zero_shot_accuracy
            ));
        }
        if self.signal_schedule.len() != self.num_layers {
            return fail(format!(
                "signal_schedule has {} entries, expected {}",
                self.signal_schedule.len(),
                self.num_layers
            ));
        }
        if self
            .signal_schedule
            .iter()
            .any(|s| !s.is_finite() || *s < 0.0)
        {
            return fail("signal_schedule entries must be finite and non-negative".into());
        }
        if self.signal_schedule.windows(2).any(|w| w[1] < w[0]) {
            return fail("signal_schedule must be nondecreasing".into());
        }
        let mut seen = vec![false; self.num_classes];
        if self.label_permutation.len() != self.num_classes {
            return fail(format!(
                "label_permutation has {} entries, expected {}",
                self.label_permutation.len(),
                self.num_classes
            ));
        }
        for (y, &t) in self.label_permutation.iter().enumerate() {
            if t >= self.num_classes || seen[t] {
                return fail("label_permutation is not a permutation of 0..K".into());
            }
            if t == y {
                return fail(format!(
                    "label_permutation fixes label {y}; it must be a derangement"
                ));
            }
            seen[t] = true;
        }
        for (name, v) in [
            ("harmful_signal_scale", self.harmful_signal_scale),
            ("retained_signal_scale", self.retained_signal_scale),
            ("noise_amplitude", self.noise_amplitude),
            ("zero_shot_sharpness", self.zero_shot_sharpness),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !self.content_free_skew.is_finite() {
            return fail("content_free_skew must be finite".into());
        }
        if self.noise_model == NoiseModel::Discrete
            && !(1..=MAX_DISCRETE_VARIANTS).contains(&self.noise_variants)
        {
            return fail(format!(
                "noise_variants must be in 1..={MAX_DISCRETE_VARIANTS}, got {}",
                self.noise_variants
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes to TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let profile: SimProfile =
            toml::from_str(text).map_err(|e| Error::Config(format!("profile: {}", e.message())))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// A profile on the discrete noise model whose outcome space is small
/// enough for exhaustive enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteProfile(SimProfile);

impl DiscreteProfile {
    pub fn new(profile: SimProfile) -> Result<Self> {
        profile.validate()?;
        if profile.noise_model != NoiseModel::Discrete {
            return Err(Error::Config(
                "an enumerable profile needs noise_model = \"discrete\"".into(),
            ));
        }
        let atoms = Self::atom_count_of(&profile);
        if atoms > MAX_ORACLE_ATOMS {
            return Err(Error::Config(format!(
                "profile has {atoms} outcome atoms, above the enumeration cap {MAX_ORACLE_ATOMS}"
            )));
        }
        Ok(DiscreteProfile(profile))
    }

    fn atom_count_of(p: &SimProfile) -> usize {
        // kind x variant x label x zero-shot correctness
        2usize
            .saturating_mul(p.noise_variants)
            .saturating_mul(p.num_classes)
            .saturating_mul(2)
    }

    pub fn atom_count(&self) -> usize {
        Self::atom_count_of(&self.0)
    }

    pub fn profile(&self) -> &SimProfile {
        &self.0
    }

    pub fn with_mix(&self, mix: f64) -> Result<Self> {
        Self::new(self.0.clone().with_mix(mix))
    }
}

impl Default for DiscreteProfile {
    fn default() -> Self {
        DiscreteProfile::new(SimProfile {
            noise_model: NoiseModel::Discrete,
            ..SimProfile::default()
        })
        .expect("default discrete profile is valid")
    }
}

impl std::ops::Deref for DiscreteProfile {
    type Target = SimProfile;

    fn deref(&self) -> &SimProfile {
        &self.0
    }
}
