//! Scenario files: everything needed to reproduce one simulated run.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{ClusterConfig, ConfigError, TaskConfig};
use crate::rng;
use crate::simulator::{DataSpec, PopulationSpec};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// When a run ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StopRule {
    /// Every task's held-out loss is at or below the value.
    TargetLoss(f64),
    /// Every task has accepted this many client updates.
    Updates(u64),
    /// Every task has committed this many server versions.
    Versions(u64),
    /// Virtual seconds.
    Time(f64),
}

impl FromStr for StopRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (key, value) = s.split_once('=').ok_or_else(|| format!("stop rule `{s}` is not of the form key=value"))?;
        let value = value.trim();
        let num = |v: &str| v.parse::<f64>().map_err(|_| format!("stop rule `{s}`: `{v}` is not a number"));
        let int = |v: &str| v.parse::<u64>().map_err(|_| format!("stop rule `{s}`: `{v}` is not a whole number"));
        match key.trim() {
            "target-loss" => Ok(StopRule::TargetLoss(num(value)?)),
            "updates" => Ok(StopRule::Updates(int(value)?)),
            "versions" => Ok(StopRule::Versions(int(value)?)),
            "time" => {
                let t = num(value)?;
                if !(t >= 0.0 && t.is_finite()) {
                    return Err(format!("stop rule `{s}`: time must be non-negative"));
                }
                Ok(StopRule::Time(t))
            }
            other => Err(format!("unknown stop rule `{other}`; expected target-loss, updates, versions or time")),
        }
    }
}

impl fmt::Display for StopRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopRule::TargetLoss(x) => write!(f, "target-loss={x}"),
            StopRule::Updates(n) => write!(f, "updates={n}"),
            StopRule::Versions(n) => write!(f, "versions={n}"),
            StopRule::Time(t) => write!(f, "time={t}"),
        }
    }
}

impl TryFrom<String> for StopRule {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<StopRule> for String {
    fn from(r: StopRule) -> Self {
        r.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureTarget {
    Aggregator,
    Coordinator,
}

/// A scheduled crash.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureEvent {
    pub at_s: f64,
    pub target: FailureTarget,
    /// Aggregator index; ignored for the coordinator.
    #[serde(default)]
    pub index: usize,
}

/// Engine knobs that are not part of the population, data or tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    /// Poisson rate of device check-ins while some task has demand.
    pub arrival_rate_per_s: f64,
    /// Delay between the end of training and the start of the upload.
    pub report_latency_s: f64,
    /// Evaluate the server model every this many versions.
    pub eval_every: u64,
    /// Upper bound on processed events before the run is abandoned.
    pub event_budget: u64,
    /// Fraction of the run excluded from mean utilization.
    pub warmup_fraction: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            arrival_rate_per_s: 1000.0,
            report_latency_s: 0.0,
            eval_every: 10,
            event_budget: 50_000_000,
            warmup_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub population: PopulationSpec,
    #[serde(default)]
    pub data: DataSpec,
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub simulation: SimSettings,
    pub stop: StopRule,
    /// Loss used for time-to-target; defaults to the stop rule's target.
    #[serde(default)]
    pub target_loss: Option<f64>,
    #[serde(default)]
    pub failures: Vec<FailureEvent>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Seed of the named sub-component, derived from the scenario seed.
    pub fn derived_seed(&self, label: &str) -> u64 {
        rng::derive_seed(self.seed, label, 0)
    }

    /// Population spec with its seed filled in from the scenario seed.
    pub fn population_spec(&self) -> PopulationSpec {
        PopulationSpec { rng_seed: self.derived_seed("population"), ..self.population.clone() }
    }

    pub fn data_spec(&self) -> DataSpec {
        DataSpec { seed: self.derived_seed("data"), ..self.data.clone() }
    }

    pub fn effective_target(&self) -> Option<f64> {
        self.target_loss.or(match self.stop {
            StopRule::TargetLoss(x) => Some(x),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.tasks.is_empty() {
            return Err(ScenarioError::Invalid("at least one [[tasks]] entry is required".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for t in &self.tasks {
            if !ids.insert(&t.task_id) {
                return Err(ScenarioError::Invalid(format!("duplicate task_id `{}`", t.task_id)));
            }
            t.validate(self.population.population_size)?;
        }
        self.population.validate().map_err(|e| ScenarioError::Invalid(format!("population: {e}")))?;
        self.data.validate().map_err(|e| ScenarioError::Invalid(format!("data: {e}")))?;
        self.cluster.validate()?;
        let s = &self.simulation;
        if !(s.arrival_rate_per_s > 0.0 && s.arrival_rate_per_s.is_finite()) {
            return Err(ScenarioError::Invalid("simulation.arrival_rate_per_s must be positive".into()));
        }
        if !(s.report_latency_s >= 0.0 && s.report_latency_s.is_finite()) {
            return Err(ScenarioError::Invalid("simulation.report_latency_s must be non-negative".into()));
        }
        if s.eval_every == 0 {
            return Err(ScenarioError::Invalid("simulation.eval_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&s.warmup_fraction) {
            return Err(ScenarioError::Invalid("simulation.warmup_fraction must lie in [0, 1)".into()));
        }
        for f in &self.failures {
            if !(f.at_s >= 0.0 && f.at_s.is_finite()) {
                return Err(ScenarioError::Invalid("failures.at_s must be non-negative".into()));
            }
            if f.target == FailureTarget::Aggregator && f.index >= self.cluster.aggregators {
                return Err(ScenarioError::Invalid(format!(
                    "failures.index {} names a missing aggregator (have {})",
                    f.index, self.cluster.aggregators
                )));
            }
        }
        Ok(())
    }
}
