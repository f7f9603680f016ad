//! Server-side state machines: client demand and assignment, the session
//! protocol, buffered aggregation, synchronous rounds with over-selection,
//! staleness aborts and failure recovery.

mod buffer;
mod cluster;
mod config;
mod events;
mod regime;
mod runtime;
mod session;

pub use buffer::{
    Accumulated, AggregationBuffer, BufferKind, Contribution, FinalizedGeneration, Payload, SubmitOutcome, UpdateKey,
};
pub use cluster::{
    CheckIn, ClientCapabilities, Cluster, ClusterConfig, Coordinator, PendingAssignment, Rejection, Selector,
};
pub use config::{over_selected, SecAggSettings, TaskConfig, TaskMode};
pub use events::{EntityKind, EventRecord, EventSink, NullSink, Transition};
pub use regime::{compute_client_demand, enforce_max_concurrency, regime_for, DemandInputs, Regime};
pub use runtime::{SecAggOffer, TaskCounters, TaskRuntime, Upload, UploadOutcome};
pub use session::{ClientSession, SessionId, SessionState};

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{scope}: invalid `{field}`: {reason}")]
    Invalid { scope: String, field: String, reason: String },
}

impl ConfigError {
    pub fn invalid(scope: &str, field: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { scope: scope.to_string(), field: field.to_string(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error("session {session}: illegal transition {from:?} -> {to:?}")]
    IllegalTransition { session: u64, from: SessionState, to: SessionState },
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("task {task} is at its concurrency bound")]
    ConcurrencyExceeded { task: usize },
    #[error("invalid aggregation buffer: {0}")]
    InvalidBuffer(String),
    #[error("vector length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("masked upload for a task without secure aggregation")]
    SecAggDisabled,
    #[error("secure aggregation failed: {0}")]
    SecAgg(String),
    #[error("no live aggregator left")]
    NoLiveAggregator,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
