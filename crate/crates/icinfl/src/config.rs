//! Pipeline configuration: one TOML file describing the task, dataset,
//! splits, collection parameters, and backend. Validation happens entirely
//! offline — a remote backend is only constructed (and its credentials
//! required) after the rest of the configuration checks out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{
    Backend, BackendDescriptor, BackendKind, BackoffPolicy, RemoteBackend, SyntheticBackend,
    SyntheticOracleConfig,
};
use crate::collector::COVERAGE_TARGET;
use crate::corpus::{DatasetSchema, ExampleId};
use crate::error::{Error, Result};

pub const ENV_API_KEY: &str = "ICINFL_API_KEY";
pub const ENV_ENDPOINT: &str = "ICINFL_ENDPOINT";

fn default_seed() -> u64 {
    crate::DEFAULT_SEED
}

fn default_seeds() -> Vec<u64> {
    crate::ORDERING_SEEDS.to_vec()
}

fn default_coverage() -> f64 {
    COVERAGE_TARGET
}

fn default_lambda() -> f64 {
    crate::datamodel::DEFAULT_LAMBDA
}

fn default_bins() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

/// Synthetic-oracle profile. Per-example qualities are materialized lazily
/// (linearly spaced over the train ids) because the id universe is only known
/// after splitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticProfile {
    #[serde(default = "SyntheticProfile::default_base_accuracy")]
    pub base_accuracy: f64,
    #[serde(default = "default_seed")]
    pub noise_seed: u64,
    #[serde(default = "SyntheticProfile::default_noise_enabled")]
    pub noise_enabled: bool,
    #[serde(default)]
    pub query_difficulty_spread: f64,
    /// Planted quality range, spaced over train ids in id order.
    #[serde(default = "SyntheticProfile::default_quality_lo")]
    pub quality_lo: f64,
    #[serde(default = "SyntheticProfile::default_quality_hi")]
    pub quality_hi: f64,
    /// Explicit per-position weights; when absent, `uniform_weight` repeated
    /// k times.
    #[serde(default)]
    pub position_weights: Option<Vec<f64>>,
    #[serde(default = "SyntheticProfile::default_uniform_weight")]
    pub uniform_weight: f64,
}

impl SyntheticProfile {
    fn default_base_accuracy() -> f64 {
        0.5
    }
    fn default_noise_enabled() -> bool {
        true
    }
    fn default_quality_lo() -> f64 {
        -0.05
    }
    fn default_quality_hi() -> f64 {
        0.05
    }
    fn default_uniform_weight() -> f64 {
        1.0
    }

    pub fn materialize(&self, train_ids: &[ExampleId], k: usize) -> Result<SyntheticOracleConfig> {
        let weights = match &self.position_weights {
            Some(w) => {
                if w.len() < k {
                    return Err(Error::Config(format!(
                        "{} position weights for k = {k}",
                        w.len()
                    )));
                }
                w.clone()
            }
            None => vec![self.uniform_weight; k],
        };
        let mut cfg = SyntheticOracleConfig::new(
            SyntheticOracleConfig::linspace_qualities(train_ids, self.quality_lo, self.quality_hi),
            weights,
            self.base_accuracy,
            self.noise_seed,
        );
        cfg.noise_enabled = self.noise_enabled;
        cfg.query_difficulty_spread = self.query_difficulty_spread;
        Ok(cfg)
    }
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model: String,
    pub token_budget: usize,
    #[serde(default = "BackendConfig::default_max_in_flight")]
    pub max_in_flight: usize,
    /// Remote base URL; `ICINFL_ENDPOINT` overrides.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub synthetic: Option<SyntheticProfile>,
}

impl BackendConfig {
    fn default_max_in_flight() -> usize {
        1
    }

    pub fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: self.kind,
            model_name: self.model.clone(),
            token_budget: self.token_budget,
            max_in_flight: self.max_in_flight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: String,
    pub dataset: PathBuf,
    pub template: PathBuf,
    pub output_dir: PathBuf,
    pub k: usize,
    /// Explicit subset count; defaults to the coverage-target heuristic.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default = "default_coverage")]
    pub coverage_target: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    pub splits: SplitConfig,
    pub schema: SchemaConfig,
    pub backend: BackendConfig,
}

/// Schema section; a thin TOML veneer over `DatasetSchema`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    #[serde(default)]
    pub slots: BTreeMap<String, String>,
    pub label_key: String,
    #[serde(default)]
    pub choices_key: Option<String>,
    #[serde(default)]
    pub fixed_choices: Option<Vec<String>>,
}

impl SchemaConfig {
    pub fn to_schema(&self) -> DatasetSchema {
        DatasetSchema {
            slots: self.slots.clone(),
            label_key: self.label_key.clone(),
            choices_key: self.choices_key.clone(),
            fixed_choices: self.fixed_choices.clone(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Offline validation: everything checkable without touching the dataset,
    /// the network, or credentials.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if self.k > self.splits.train {
            return Err(Error::Config(format!(
                "k {} exceeds train split size {}",
                self.k, self.splits.train
            )));
        }
        if self.splits.train == 0 || self.splits.dev == 0 {
            return Err(Error::Config("train and dev splits must be non-empty".into()));
        }
        if self.m == Some(0) {
            return Err(Error::Config("m must be positive when given".into()));
        }
        if !(self.coverage_target > 0.0) {
            return Err(Error::Config("coverage_target must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.n_bins < 2 {
            return Err(Error::Config("n_bins must be at least 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list must be non-empty".into()));
        }
        if self.schema.choices_key.is_none() && self.schema.fixed_choices.is_none() {
            return Err(Error::Config(
                "schema needs choices_key or fixed_choices".into(),
            ));
        }
        self.backend.descriptor().validate()?;
        match self.backend.kind {
            BackendKind::Synthetic => {
                if self.backend.synthetic.is_none() {
                    return Err(Error::Config(
                        "synthetic backend requires a [backend.synthetic] profile".into(),
                    ));
                }
            }
            BackendKind::Remote => {
                // credential presence is checked here so misconfiguration
                // fails before any request is attempted
                if self.endpoint().is_none() {
                    return Err(Error::Config(format!(
                        "remote backend requires an endpoint (config or {ENV_ENDPOINT})"
                    )));
                }
                if std::env::var(ENV_API_KEY).is_err() {
                    return Err(Error::Config(format!(
                        "remote backend requires {ENV_API_KEY} to be set"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn endpoint(&self) -> Option<String> {
        std::env::var(ENV_ENDPOINT)
            .ok()
            .or_else(|| self.backend.endpoint.clone())
    }

    pub fn effective_m(&self, train_len: usize) -> usize {
        self.m
            .unwrap_or_else(|| crate::collector::default_m(train_len, self.k, self.coverage_target))
    }

    /// Construct the configured backend. `train_ids` feeds the synthetic
    /// profile; `k` sizes its position-weight vector (use the largest k the
    /// run will need).
    pub fn build_backend(&self, train_ids: &[ExampleId], k: usize) -> Result<Box<dyn Backend>> {
        match self.backend.kind {
            BackendKind::Synthetic => {
                let profile = self.backend.synthetic.as_ref().ok_or_else(|| {
                    Error::Config("synthetic backend requires a [backend.synthetic] profile".into())
                })?;
                Ok(Box::new(SyntheticBackend::new(
                    self.backend.descriptor(),
                    profile.materialize(train_ids, k)?,
                )?))
            }
            BackendKind::Remote => {
                let endpoint = self.endpoint().ok_or_else(|| {
                    Error::Config(format!(
                        "remote backend requires an endpoint (config or {ENV_ENDPOINT})"
                    ))
                })?;
                let api_key = std::env::var(ENV_API_KEY).map_err(|_| {
                    Error::Config(format!("remote backend requires {ENV_API_KEY} to be set"))
                })?;
                Ok(Box::new(RemoteBackend::new(
                    self.backend.descriptor(),
                    &endpoint,
                    &api_key,
                    BackoffPolicy::default(),
                )?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
task = "toy"
dataset = "data/toy.jsonl"
template = "assets/templates/toy.toml"
output_dir = "out"
k = 4

[splits]
train = 40
dev = 20
test = 10

[schema]
label_key = "label"
fixed_choices = ["yes", "no"]
[schema.slots]
goal = "goal"

[backend]
kind = "synthetic"
model = "oracle"
token_budget = 1000000

[backend.synthetic]
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = PipelineConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.seeds, crate::ORDERING_SEEDS.to_vec());
        assert_eq!(cfg.splits.seed, 42);
        assert!((cfg.lambda - 1e-4).abs() < 1e-18);
        assert_eq!(cfg.n_bins, 5);
        assert_eq!(cfg.effective_m(40), 300); // ceil(30*40/4)
        assert_eq!(cfg.schema.to_schema().fixed_choices.unwrap().len(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("k = 4", "k = 4\nbogus = true");
        assert!(PipelineConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn k_must_fit_train_split() {
        let text = MINIMAL.replace("k = 4", "k = 41");
        let err = PipelineConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("exceeds train split"));
    }

    #[test]
    fn synthetic_backend_requires_profile() {
        let text = MINIMAL.replace("[backend.synthetic]\n", "");
        let err = PipelineConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("synthetic"));
    }

    #[test]
    fn remote_requires_endpoint_or_env() {
        let text = MINIMAL
            .replace("kind = \"synthetic\"", "kind = \"remote\"")
            .replace("[backend.synthetic]\n", "");
        // neither config endpoint nor env set in the test process
        std::env::remove_var(ENV_ENDPOINT);
        std::env::remove_var(ENV_API_KEY);
        let err = PipelineConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("endpoint"));
    }

    #[test]
    fn synthetic_profile_materializes_weights() {
        let cfg = PipelineConfig::from_toml_str(MINIMAL).unwrap();
        let profile = cfg.backend.synthetic.as_ref().unwrap();
        let oracle = profile.materialize(&[1, 2, 3], 3).unwrap();
        assert_eq!(oracle.position_weights, vec![1.0; 3]);
        assert!((oracle.quality[&1] - (-0.05)).abs() < 1e-12);
        assert!((oracle.quality[&3] - 0.05).abs() < 1e-12);

        let text = MINIMAL.replace(
            "[backend.synthetic]\n",
            "[backend.synthetic]\nposition_weights = [0.0, 0.01]\n",
        );
        let cfg = PipelineConfig::from_toml_str(&text).unwrap();
        let profile = cfg.backend.synthetic.as_ref().unwrap();
        assert!(profile.materialize(&[1, 2, 3], 3).is_err());
        assert_eq!(
            profile.materialize(&[1, 2], 2).unwrap().position_weights,
            vec![0.0, 0.01]
        );
    }

    #[test]
    fn explicit_m_overrides_coverage_heuristic() {
        let text = MINIMAL.replace("k = 4", "k = 4\nm = 17");
        let cfg = PipelineConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.effective_m(40), 17);
    }
}
