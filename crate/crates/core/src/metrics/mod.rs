//! Quantities derived from a run's event log. Everything here is a pure
//! function of the log, so a persisted log reproduces every number.

mod evaluation;
mod io;
mod ks;
mod rates;
mod replay;
mod summary;
mod utilization;

pub use evaluation::{linear_fit, percentile_eval, LinearFit, PercentileLoss};
pub use io::{read_ndjson, write_csv_series, write_ndjson, write_run_artifacts, ArtifactPaths};
pub use ks::{brute_force_ks_d, kolmogorov_survival, ks_two_sample, KsResult};
pub use rates::{
    accepted_examples, commit_times, communication_trips, eval_series, server_updates_per_hour, time_to_target_loss,
    updates_per_hour,
};
pub use replay::replay_counters;
pub use summary::{summarize, RunSummary, TaskSummary};
pub use utilization::{mean_utilization, sync_troughs, utilization_series, UtilizationPoint};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sample `{0}` is empty")]
    EmptySample(&'static str),
    #[error("no clients at or above the {0} percentile")]
    EmptyBucket(f64),
    #[error("percentile cut {0} outside [0, 100]")]
    BadPercentile(f64),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}, line {line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}
