//! Parameter vectors, local client training on synthetic tasks,
//! staleness-weighted accumulation and the FedAdam server optimizer.

mod aggregate;
mod fedadam;
mod staleness;
mod task;
mod train;

pub use aggregate::{finalize_aggregate, WeightedSum};
pub use fedadam::{fedadam_step, FedAdamConfig, ServerModel, ServerOptimizerState};
pub use staleness::{compute_staleness, staleness_weight, update_weight};
pub use task::{Dataset, SyntheticTask, TaskKind};
pub use train::{local_train, ClientUpdate, LocalTrainConfig};

use thiserror::Error;

/// Errors raised by model-level operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("current version {current} precedes initial version {initial}")]
    VersionRegression { initial: u64, current: u64 },
    #[error("update must be trained on at least one example")]
    ZeroExamples,
    #[error("client dataset is empty")]
    EmptyDataset,
    #[error("vector length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("total aggregation weight must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("invalid hyperparameter {name}: {value}")]
    InvalidHyperparameter { name: &'static str, value: f64 },
}
