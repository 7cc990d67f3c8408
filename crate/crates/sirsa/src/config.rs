//! Run configuration: one JSON document determines suites, training, and
//! evaluation. Unknown keys are rejected; every artifact embeds the config
//! hash so mismatched checkpoint/eval pairs are detectable.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{Algorithm, PolicySpec, TrainingConfig};
use crate::env::{EnvVariant, HORIZON};
use crate::error::SirsaError;
use crate::rcmdp::{make_task_suite, SetDistribution, TaskSuite};
use crate::Result;

/// Suite generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub n_train_sets: usize,
    pub contexts_per_set: usize,
    pub n_test_sets: usize,
    pub width_fraction: f64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            n_train_sets: 20,
            contexts_per_set: 3,
            n_test_sets: 20,
            width_fraction: 0.25,
            seed: 1,
        }
    }
}

/// Evaluation protocol parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Rollouts per uncertainty set (K).
    pub k_rollouts: usize,
    pub horizon: usize,
    pub r_levels: Vec<f64>,
    pub nonstationary_period: usize,
    pub nonstationary_rollouts: usize,
    /// α levels swept for the WCPG family at evaluation.
    pub wcpg_alpha_levels: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_rollouts: 50,
            horizon: HORIZON,
            r_levels: vec![0.25, 0.5, 0.75, 1.0],
            nonstationary_period: 10,
            nonstationary_rollouts: 10,
            wcpg_alpha_levels: vec![0.25, 0.5, 0.75, 1.0],
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env_variant: EnvVariant,
    pub suite: SuiteConfig,
    pub policy: PolicySpec,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    pub output_dir: String,
}

impl RunConfig {
    pub fn defaults(variant: EnvVariant, algorithm: Algorithm) -> Self {
        Self {
            env_variant: variant,
            suite: SuiteConfig::default(),
            policy: PolicySpec::defaults_for(algorithm),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
            seeds: vec![0],
            output_dir: "runs".to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.training.validate(&self.policy)?;
        if self.suite.n_train_sets == 0
            || self.suite.contexts_per_set == 0
            || self.suite.n_test_sets == 0
        {
            return Err(SirsaError::InvalidConfig("suite counts must be positive".into()));
        }
        if !(self.suite.width_fraction > 0.0 && self.suite.width_fraction <= 1.0) {
            return Err(SirsaError::InvalidConfig(format!(
                "width_fraction must be in (0, 1], got {}",
                self.suite.width_fraction
            )));
        }
        if self.eval.k_rollouts == 0 || self.eval.horizon == 0 {
            return Err(SirsaError::InvalidConfig("eval counts must be positive".into()));
        }
        if self.eval.nonstationary_period == 0
            || self.eval.horizon % self.eval.nonstationary_period != 0
        {
            return Err(SirsaError::InvalidConfig(
                "nonstationary period must divide the horizon".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(SirsaError::InvalidConfig("seeds must be non-empty".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Hex digest of the canonical JSON form; embedded in every artifact.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Build the task suite this config describes.
    pub fn build_suite(&self) -> Result<TaskSuite> {
        let dist = SetDistribution::new(
            self.env_variant.context_space(),
            self.suite.width_fraction,
        )?;
        make_task_suite(
            &dist,
            self.suite.n_train_sets,
            self.suite.contexts_per_set,
            self.suite.n_test_sets,
            self.suite.seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_hash_stably() {
        let cfg = RunConfig::defaults(EnvVariant::Combined, Algorithm::Sirsa);
        cfg.validate().unwrap();
        assert_eq!(cfg.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seeds = vec![1];
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn json_round_trip_and_unknown_key_rejection() {
        let cfg = RunConfig::defaults(EnvVariant::ObstacleOnly, Algorithm::SetEpopt);
        let json = cfg.to_json().unwrap();
        let parsed = RunConfig::from_json(&json).unwrap();
        assert_eq!(parsed.hash(), cfg.hash());

        let with_unknown = json.replacen('{', "{\n  \"mystery_knob\": 3,", 1);
        assert!(RunConfig::from_json(&with_unknown).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = RunConfig::defaults(EnvVariant::Combined, Algorithm::Sirsa);
        cfg.suite.width_fraction = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::defaults(EnvVariant::Combined, Algorithm::Sirsa);
        cfg.policy.alpha = 0.005; // ⌊αN⌋ = 0
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::defaults(EnvVariant::Combined, Algorithm::Sirsa);
        cfg.training.budget = 10;
        cfg.policy.t_threshold = 100;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::defaults(EnvVariant::Combined, Algorithm::Sirsa);
        cfg.eval.nonstationary_period = 7;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn suite_is_reproducible_from_config() {
        let cfg = RunConfig::defaults(EnvVariant::VelocityOnly, Algorithm::SystemId);
        let a = cfg.build_suite().unwrap();
        let b = cfg.build_suite().unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.train_sets.len(), 20);
        assert_eq!(a.n_train_contexts(), 60);
        assert_eq!(a.test_sets.len(), 20);
    }
}
