use serde::{Deserialize, Serialize};

use super::ConfigError;
use crate::model::{FedAdamConfig, LocalTrainConfig};
use crate::secagg::GroupConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Sync,
    Async,
}

/// Fixed-point parameters for masked aggregation of one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecAggSettings {
    #[serde(default = "default_modulus_bits")]
    pub modulus_bits: u32,
    #[serde(default = "default_scaling_factor")]
    pub scaling_factor: f64,
    /// Each weighted coordinate is clipped to `[-clip_bound, clip_bound]`
    /// before fixed-point conversion.
    #[serde(default = "default_clip_bound")]
    pub clip_bound: f64,
}

fn default_modulus_bits() -> u32 {
    32
}

fn default_scaling_factor() -> f64 {
    65536.0
}

fn default_clip_bound() -> f64 {
    8.0
}

impl Default for SecAggSettings {
    fn default() -> Self {
        Self { modulus_bits: 32, scaling_factor: 65536.0, clip_bound: 8.0 }
    }
}

/// Static description of one training task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub task_id: String,
    pub mode: TaskMode,
    pub concurrency: usize,
    /// Required for async tasks. Sync tasks aggregate exactly `concurrency`
    /// updates per round; if given it must equal `concurrency`.
    #[serde(default)]
    pub aggregation_goal: Option<usize>,
    #[serde(default)]
    pub over_selection: f64,
    /// Sessions more than this many versions behind are aborted. Unbounded if absent.
    #[serde(default)]
    pub max_staleness: Option<u64>,
    #[serde(default = "default_client_timeout")]
    pub client_timeout_s: f64,
    #[serde(default)]
    pub secagg_enabled: bool,
    #[serde(default)]
    pub secagg: Option<SecAggSettings>,
    /// Async only: hold selection until the open generation's updates have
    /// all landed, so each version is built from one cohort.
    #[serde(default)]
    pub barrier: bool,
    #[serde(default)]
    pub server_optimizer: FedAdamConfig,
    #[serde(default)]
    pub local_training: LocalTrainConfig,
}

fn default_client_timeout() -> f64 {
    240.0
}

impl TaskConfig {
    pub fn new_async(task_id: &str, concurrency: usize, aggregation_goal: usize) -> Self {
        Self::base(task_id, TaskMode::Async, concurrency, Some(aggregation_goal), 0.0)
    }

    pub fn new_sync(task_id: &str, concurrency: usize, over_selection: f64) -> Self {
        Self::base(task_id, TaskMode::Sync, concurrency, None, over_selection)
    }

    fn base(task_id: &str, mode: TaskMode, concurrency: usize, goal: Option<usize>, over_selection: f64) -> Self {
        Self {
            task_id: task_id.to_string(),
            mode,
            concurrency,
            aggregation_goal: goal,
            over_selection,
            max_staleness: None,
            client_timeout_s: default_client_timeout(),
            secagg_enabled: false,
            secagg: None,
            barrier: false,
            server_optimizer: FedAdamConfig::default(),
            local_training: LocalTrainConfig::default(),
        }
    }

    /// Number of updates folded into each server version.
    pub fn effective_goal(&self) -> usize {
        match self.mode {
            TaskMode::Sync => self.concurrency,
            TaskMode::Async => self.aggregation_goal.unwrap_or(self.concurrency),
        }
    }

    /// Upper bound on simultaneously participating clients.
    pub fn selection_bound(&self) -> usize {
        match self.mode {
            TaskMode::Sync => over_selected(self.concurrency, self.over_selection),
            TaskMode::Async => self.concurrency,
        }
    }

    pub fn secagg_settings(&self) -> SecAggSettings {
        self.secagg.unwrap_or_default()
    }

    /// Group used for masked aggregation of a `dim`-parameter model.
    pub fn secagg_group(&self, dim: usize) -> Result<GroupConfig, ConfigError> {
        let s = self.secagg_settings();
        GroupConfig::new(s.modulus_bits, dim, s.scaling_factor, self.effective_goal())
            .map_err(|e| ConfigError::invalid(&self.task_id, "secagg", e.to_string()))
    }

    /// Checks the task against itself and the population it will draw from.
    pub fn validate(&self, population_size: usize) -> Result<(), ConfigError> {
        let id = &self.task_id;
        if self.task_id.is_empty() {
            return Err(ConfigError::invalid(id, "task_id", "must not be empty"));
        }
        if self.concurrency == 0 {
            return Err(ConfigError::invalid(id, "concurrency", "must be positive"));
        }
        if !(self.over_selection >= 0.0 && self.over_selection.is_finite()) {
            return Err(ConfigError::invalid(id, "over_selection", "must be a non-negative number"));
        }
        match self.mode {
            TaskMode::Sync => {
                if let Some(k) = self.aggregation_goal {
                    if k != self.concurrency {
                        return Err(ConfigError::invalid(
                            id,
                            "aggregation_goal",
                            format!("sync tasks aggregate exactly concurrency={} updates, got {k}", self.concurrency),
                        ));
                    }
                }
                if self.barrier {
                    return Err(ConfigError::invalid(id, "barrier", "only meaningful for async tasks"));
                }
            }
            TaskMode::Async => {
                let k = self
                    .aggregation_goal
                    .ok_or_else(|| ConfigError::invalid(id, "aggregation_goal", "required for async tasks"))?;
                if k == 0 || k > self.concurrency {
                    return Err(ConfigError::invalid(
                        id,
                        "aggregation_goal",
                        format!("must be in 1..={}, got {k}", self.concurrency),
                    ));
                }
                if self.over_selection != 0.0 {
                    return Err(ConfigError::invalid(id, "over_selection", "only sync tasks over-select"));
                }
            }
        }
        if self.max_staleness == Some(0) {
            return Err(ConfigError::invalid(id, "max_staleness", "must be positive"));
        }
        if !(self.client_timeout_s > 0.0 && self.client_timeout_s.is_finite()) {
            return Err(ConfigError::invalid(id, "client_timeout_s", "must be positive"));
        }
        let opt = &self.server_optimizer;
        if !(opt.learning_rate > 0.0)
            || !(0.0..1.0).contains(&opt.beta1)
            || !(0.0..1.0).contains(&opt.beta2)
            || !(opt.epsilon > 0.0)
        {
            return Err(ConfigError::invalid(id, "server_optimizer", "needs lr > 0, betas in [0,1), epsilon > 0"));
        }
        if !(self.local_training.lr > 0.0) || self.local_training.batch_size == 0 {
            return Err(ConfigError::invalid(id, "local_training", "needs lr > 0 and batch_size > 0"));
        }
        let needed = self.selection_bound();
        if population_size < needed {
            return Err(ConfigError::invalid(
                id,
                "concurrency",
                format!("population of {population_size} cannot fill {needed} concurrent slots"),
            ));
        }
        if self.secagg.is_some() && !self.secagg_enabled {
            return Err(ConfigError::invalid(id, "secagg", "settings given but secagg_enabled is false"));
        }
        if self.secagg_enabled {
            let s = self.secagg_settings();
            if !(s.clip_bound > 0.0 && s.clip_bound.is_finite()) {
                return Err(ConfigError::invalid(id, "secagg.clip_bound", "must be positive"));
            }
            let group = self.secagg_group(1)?;
            group
                .check_no_overflow(s.clip_bound, self.effective_goal())
                .map_err(|e| ConfigError::invalid(id, "secagg", e.to_string()))?;
        }
        Ok(())
    }
}

/// `round(c * (1 + o))`; rounding rather than ceiling keeps 100 * 1.3 at 130.
pub fn over_selected(concurrency: usize, over_selection: f64) -> usize {
    (concurrency as f64 * (1.0 + over_selection)).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn over_selection_rounds() {
        assert_eq!(over_selected(100, 0.3), 130);
        assert_eq!(over_selected(4, 0.25), 5);
        assert_eq!(over_selected(128, 0.3), 166);
        assert_eq!(over_selected(8, 0.0), 8);
    }

    #[test]
    fn goals_follow_mode() {
        assert_eq!(TaskConfig::new_sync("s", 100, 0.3).effective_goal(), 100);
        assert_eq!(TaskConfig::new_sync("s", 100, 0.3).selection_bound(), 130);
        assert_eq!(TaskConfig::new_async("a", 100, 10).effective_goal(), 10);
        assert_eq!(TaskConfig::new_async("a", 100, 10).selection_bound(), 100);
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = TaskConfig::new_async("a", 10, 20);
        assert!(c.validate(100).unwrap_err().to_string().contains("aggregation_goal"));
        c.aggregation_goal = Some(5);
        c.validate(100).unwrap();
        c.over_selection = 0.3;
        assert!(c.validate(100).unwrap_err().to_string().contains("over_selection"));

        let mut s = TaskConfig::new_sync("s", 100, 0.3);
        s.validate(130).unwrap();
        assert!(s.validate(129).unwrap_err().to_string().contains("population of 129"));
        s.aggregation_goal = Some(50);
        assert!(s.validate(1000).unwrap_err().to_string().contains("aggregation_goal"));
        s.aggregation_goal = Some(100);
        s.validate(1000).unwrap();
        s.max_staleness = Some(0);
        assert!(s.validate(1000).is_err());
    }

    #[test]
    fn secagg_overflow_is_rejected() {
        let mut c = TaskConfig::new_async("a", 100, 50);
        c.secagg_enabled = true;
        c.validate(1000).unwrap();
        // 65536 * 8 * 50 = 26_214_400 < 2^31
        c.secagg = Some(SecAggSettings { modulus_bits: 24, ..SecAggSettings::default() });
        assert!(c.validate(1000).unwrap_err().to_string().contains("secagg"));
    }

    #[test]
    fn toml_rejects_unknown_keys() {
        let err = toml::from_str::<TaskConfig>(
            "task_id = 'a'\nmode = 'async'\nconcurrency = 4\naggregation_goal = 2\nconcurency = 5\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("concurency"), "{err}");
    }
}
