//! Experiment config: one JSON document with sections `model`, `simulate`,
//! `observe`, `optimizer`, `evaluate` and an optional `sweep`. Unknown keys
//! are rejected and every error carries the offending field path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::likelihood::ObservedStateSet;
use crate::models::ParametricModel;
use crate::optimizer::OptimizerConfig;
use crate::simulator::SimulationConfig;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("config error at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Ground-truth θ*: explicit values, or a generated upper-triangular
/// service profile standing in for measured data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaStar {
    Values(Vec<f64>),
    Emulated { emulated: Emulation },
}

/// `θ_ij = service / (1 + slowdown·i) · batch^(i−1−j)`: one-step service
/// slows as the queue grows, multi-step drops decay geometrically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Emulation {
    pub service: f64,
    pub slowdown: f64,
    pub batch: f64,
}

impl Emulation {
    pub fn theta(&self, model: &ParametricModel) -> Vec<f64> {
        let n = model.state_count();
        let mut out = vec![0.0; model.param_len()];
        for i in 1..n {
            let base = self.service / (1.0 + self.slowdown * i as f64);
            for j in 0..i {
                out[ParametricModel::lower_index(i, j)] =
                    base * self.batch.powi((i - 1 - j) as i32);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub windows: usize,
    /// `[λ_min, λ_max]`.
    pub load: [f64; 2],
}

fn d_window_length() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub theta_star: ThetaStar,
    pub train: LoadSpec,
    pub test: LoadSpec,
    #[serde(default = "d_window_length")]
    pub window_length: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserveSection {
    pub states: ObservedStateSet,
}

fn d_replicates() -> usize {
    1
}
fn d_monitor() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// Defaults to the model's failure states.
    #[serde(default)]
    pub failure_states: Option<Vec<usize>>,
    #[serde(default = "d_replicates")]
    pub replicates: usize,
    /// Record test metrics after every epoch.
    #[serde(default = "d_monitor")]
    pub monitor: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            failure_states: None,
            replicates: d_replicates(),
            monitor: d_monitor(),
        }
    }
}

/// Runs the experiment once per value, with `path` (dotted, e.g.
/// `optimizer.p`) overwritten by that value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub path: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ParametricModel,
    pub simulate: SimulateSection,
    pub observe: ObserveSection,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(v: &Value) -> Result<Self, ConfigError> {
        Self::from_json_str(&v.to_string())
    }

    pub fn load(path: &Path) -> Result<(Self, Value), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(".", format!("cannot read {}: {e}", path.display())))?;
        let raw: Value =
            serde_json::from_str(&text).map_err(|e| ConfigError::new(".", e.to_string()))?;
        Ok((Self::from_json_str(&text)?, raw))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model
            .validate()
            .map_err(|e| ConfigError::new("model", e.to_string()))?;
        let theta = self.theta_star();
        if theta.len() != self.model.param_len() {
            return Err(ConfigError::new(
                "simulate.theta_star",
                format!(
                    "expected {} values, got {}",
                    self.model.param_len(),
                    theta.len()
                ),
            ));
        }
        if theta.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(ConfigError::new("simulate.theta_star", "rates must be > 0"));
        }
        for (name, spec) in [
            ("train", &self.simulate.train),
            ("test", &self.simulate.test),
        ] {
            let [lo, hi] = spec.load;
            if spec.windows == 0 {
                return Err(ConfigError::new(
                    format!("simulate.{name}.windows"),
                    "must be >= 1",
                ));
            }
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(ConfigError::new(
                    format!("simulate.{name}.load"),
                    format!("need 0 < min <= max, got [{lo}, {hi}]"),
                ));
            }
        }
        if !(self.simulate.window_length > 0.0) {
            return Err(ConfigError::new("simulate.window_length", "must be > 0"));
        }
        self.observe
            .states
            .check_dim(self.model.state_count())
            .map_err(|e| ConfigError::new("observe.states", e.to_string()))?;
        if let Some(fs) = &self.evaluate.failure_states {
            if fs.is_empty() || fs.iter().any(|&s| s >= self.model.state_count()) {
                return Err(ConfigError::new(
                    "evaluate.failure_states",
                    "states out of range",
                ));
            }
        }
        if self.evaluate.replicates == 0 {
            return Err(ConfigError::new("evaluate.replicates", "must be >= 1"));
        }
        self.optimizer
            .validate(&self.model)
            .map_err(|e| ConfigError::new("optimizer", e.to_string()))?;
        if let Some(grid) = &self.optimizer.eta_grid {
            if grid.is_empty() || grid.iter().any(|v| !(*v > 0.0)) {
                return Err(ConfigError::new("optimizer.eta_grid", "values must be > 0"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(ConfigError::new("sweep.values", "must be non-empty"));
            }
        }
        Ok(())
    }

    pub fn theta_star(&self) -> Vec<f64> {
        match &self.simulate.theta_star {
            ThetaStar::Values(v) => v.clone(),
            ThetaStar::Emulated { emulated } => emulated.theta(&self.model),
        }
    }

    pub fn is_emulated(&self) -> bool {
        matches!(self.simulate.theta_star, ThetaStar::Emulated { .. })
    }

    pub fn failure_states(&self) -> Vec<usize> {
        self.evaluate
            .failure_states
            .clone()
            .unwrap_or_else(|| self.model.failure_states())
    }

    /// Simulation settings for replicate `r`: train data uses seed
    /// `seed + r`, test data a disjoint seed range.
    pub fn simulation(&self, replicate: usize, test: bool) -> SimulationConfig {
        let spec = if test {
            &self.simulate.test
        } else {
            &self.simulate.train
        };
        let base = self.simulate.seed.wrapping_add(replicate as u64);
        let seed = if test { base ^ (1 << 40) } else { base };
        let mut cfg = SimulationConfig::new(
            self.model.clone(),
            self.theta_star(),
            spec.windows,
            (spec.load[0], spec.load[1]),
            self.observe.states.clone(),
            seed,
        );
        cfg.window_length = self.simulate.window_length;
        cfg.slack = self.optimizer.slack;
        cfg
    }

    /// Optimizer settings for replicate `r`.
    pub fn optimizer_for(&self, replicate: usize) -> OptimizerConfig {
        let mut cfg = self.optimizer.clone();
        cfg.seed = cfg.seed.wrapping_add(replicate as u64);
        cfg
    }

    /// Overrides both base seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.simulate.seed = seed;
        self.optimizer.seed = seed;
        self
    }
}

/// Sets a dotted path inside a JSON document, creating objects as needed.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), ConfigError> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ConfigError::new(parts[..i].join("."), "not an object"))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(ConfigError::new(path, "empty path"))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"{
        "name": "sample",
        "model": {"kind": "mm1k", "capacity": 20},
        "simulate": {
            "theta_star": [25.0],
            "train": {"windows": 50, "load": [11, 15]},
            "test": {"windows": 50, "load": [31, 60]},
            "seed": 0
        },
        "observe": {"states": [0, 1]},
        "optimizer": {"engine": "infsgd", "epochs": 50, "eta0": 0.02}
    }"#;

    #[test]
    fn parses_sample_with_defaults() {
        let c = ExperimentConfig::from_json_str(SAMPLE).unwrap();
        assert_eq!(c.simulate.window_length, 1.0);
        assert_eq!(c.evaluate.replicates, 1);
        assert_eq!(c.failure_states(), vec![20]);
        assert_eq!(c.optimizer.p, 0.1);
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let text = SAMPLE.replace("\"eta0\": 0.02", "\"eta0\": 0.02, \"momentum\": 0.9");
        let e = ExperimentConfig::from_json_str(&text).unwrap_err();
        assert_eq!(e.path, "optimizer.momentum");
        assert!(e.message.contains("momentum"), "{e}");
        let text = SAMPLE.replace(
            "\"windows\": 50, \"load\": [11, 15]",
            "\"windows\": 50, \"load\": [11, 15], \"x\": 1",
        );
        let e = ExperimentConfig::from_json_str(&text).unwrap_err();
        assert_eq!(e.path, "simulate.train.x");
        let text = SAMPLE.replace("\"capacity\": 20}", "\"capacity\": 20, \"servers\": 2}");
        assert!(ExperimentConfig::from_json_str(&text).is_err());
    }

    #[test]
    fn semantic_errors_have_paths() {
        let text = SAMPLE.replace("[25.0]", "[25.0, 1.0]");
        assert_eq!(
            ExperimentConfig::from_json_str(&text).unwrap_err().path,
            "simulate.theta_star"
        );
        let text = SAMPLE.replace("[0, 1]", "[0, 40]");
        assert_eq!(
            ExperimentConfig::from_json_str(&text).unwrap_err().path,
            "observe.states"
        );
        let text = SAMPLE.replace("[31, 60]", "[60, 31]");
        assert_eq!(
            ExperimentConfig::from_json_str(&text).unwrap_err().path,
            "simulate.test.load"
        );
    }

    #[test]
    fn emulated_profile_decreases_with_queue_length() {
        let m = ParametricModel::UpperTriangular { capacity: 3 };
        let e = Emulation {
            service: 20.0,
            slowdown: 0.5,
            batch: 0.1,
        };
        let th = e.theta(&m);
        assert_eq!(th.len(), 10);
        let one_step = |i: usize| th[ParametricModel::lower_index(i, i - 1)];
        assert_eq!(one_step(1), 20.0 / 1.5);
        assert!(one_step(4) < one_step(3));
        assert!((th[ParametricModel::lower_index(3, 1)] - one_step(3) * 0.1).abs() < 1e-12);
    }

    #[test]
    fn set_path_overrides_nested_value() {
        let mut v: Value = serde_json::from_str(SAMPLE).unwrap();
        set_path(&mut v, "optimizer.p", serde_json::json!(0.01)).unwrap();
        let c = ExperimentConfig::from_value(&v).unwrap();
        assert_eq!(c.optimizer.p, 0.01);
    }
}
