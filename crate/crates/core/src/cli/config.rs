//! JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::DatasetKind;
use crate::flow::{BackboneConfig, FlowProblem};
use crate::quadrature::RuleKind;
use crate::sidenet::ChainTrainConfig;
use crate::solvers::{SamplerConfig, SolverKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub dataset: DatasetKind,
    #[serde(default)]
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub solver: SolverKind,
    pub intervals: usize,
    #[serde(default = "default_rule")]
    pub rule: RuleKind,
    pub n_samples: usize,
    pub seed: u64,
}

fn default_rule() -> RuleKind {
    RuleKind::GaussLobatto4
}

impl SamplerSection {
    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            solver: self.solver,
            intervals: self.intervals,
            rule: self.rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default = "default_bench_solvers")]
    pub solvers: Vec<SolverKind>,
    #[serde(default = "default_bench_intervals")]
    pub intervals: Vec<usize>,
    /// Euler step count of the high-accuracy reference run.
    #[serde(default = "default_reference_intervals")]
    pub reference_intervals: usize,
    #[serde(default = "default_rule")]
    pub rule: RuleKind,
    pub n_samples: usize,
    /// Size of the data set every sample set is compared against.
    pub n_reference: usize,
    #[serde(default = "default_projections")]
    pub n_projections: usize,
    pub seed: u64,
}

fn default_bench_solvers() -> Vec<SolverKind> {
    SolverKind::ALL.to_vec()
}

fn default_bench_intervals() -> Vec<usize> {
    vec![3, 5, 7, 10, 15]
}

fn default_reference_intervals() -> usize {
    100
}

fn default_projections() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub backbone: BackboneConfig,
    pub sidenet: ChainTrainConfig,
    pub sampler: SamplerSection,
    pub bench: BenchSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// Reads a config file, or the `resolved_config` of a run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let value = match value.get("resolved_config") {
            Some(inner) => inner.clone(),
            None => value,
        };
        let config: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.problem.dataset.dim();
        if let Some(d) = self.problem.dim {
            if d != dim {
                return Err(Error::Config(format!(
                    "dataset {} is {dim}-dimensional, config says {d}",
                    self.problem.dataset.name()
                )));
            }
        }
        if self.backbone.iterations > 0 && self.backbone.batch_size == 0 {
            return Err(Error::Config("backbone.batch_size must be positive".into()));
        }
        self.sidenet.validate().map_err(|e| Error::Config(format!("sidenet: {e}")))?;
        self.sampler
            .sampler_config()
            .validate()
            .map_err(|e| Error::Config(format!("sampler: {e}")))?;
        if self.sampler.n_samples == 0 || self.bench.n_samples == 0 || self.bench.n_reference == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if self.bench.intervals.contains(&0) || self.bench.reference_intervals == 0 {
            return Err(Error::Config("bench interval counts must be positive".into()));
        }
        if self.bench.n_projections == 0 {
            return Err(Error::Config("bench.n_projections must be positive".into()));
        }
        Ok(())
    }

    pub fn problem(&self) -> FlowProblem {
        FlowProblem::dataset(self.problem.dataset)
    }

    /// Replaces every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        self.backbone.seed = seed;
        self.sidenet.seed = seed;
        self.sampler.seed = seed;
        self.bench.seed = seed;
    }

    /// Hex SHA-256 of the compact JSON encoding.
    pub fn sha256(&self) -> String {
        let json = serde_json::to_vec(self).expect("config always serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> serde_json::Value {
        serde_json::json!({
            "problem": {"dataset": "gaussian_ring8", "dim": 2},
            "backbone": {"iterations": 2, "batch_size": 4, "lr": 1e-3, "seed": 1},
            "sidenet": {"batch_size": 4, "iterations": 2, "seed": 2},
            "sampler": {"solver": "bi_anchor", "intervals": 5, "n_samples": 8, "seed": 3},
            "bench": {"n_samples": 8, "n_reference": 8, "seed": 4},
            "output": {"directory": "out"}
        })
    }

    fn parse(v: serde_json::Value) -> Result<RunConfig> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, v.to_string()).unwrap();
        RunConfig::load(&path)
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse(sample()).unwrap();
        assert_eq!(c.sidenet.chain_length, 8);
        assert_eq!(c.sidenet.lambda_trunc, 50.0);
        assert_eq!(c.sidenet.lr, 1e-4);
        assert_eq!(c.bench.intervals, vec![3, 5, 7, 10, 15]);
        assert_eq!(c.sampler.rule, RuleKind::GaussLobatto4);
    }

    #[test]
    fn missing_dataset_is_a_config_error() {
        let mut v = sample();
        v["problem"].as_object_mut().unwrap().remove("dataset");
        assert!(matches!(parse(v), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_and_bad_dims_are_rejected() {
        let mut v = sample();
        v["sampler"]["speed"] = serde_json::json!(3);
        assert!(parse(v).is_err());
        let mut v = sample();
        v["problem"]["dim"] = serde_json::json!(3);
        assert!(parse(v).is_err());
    }

    #[test]
    fn manifest_wrapping_is_accepted() {
        let c = parse(sample()).unwrap();
        let wrapped = serde_json::json!({"command": "sample", "resolved_config": sample()});
        assert_eq!(parse(wrapped).unwrap(), c);
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse(sample()).unwrap();
        let mut b = a.clone();
        assert_eq!(a.sha256(), b.sha256());
        b.override_seed(99);
        assert_ne!(a.sha256(), b.sha256());
    }
}
