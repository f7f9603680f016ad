use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    accepted_examples, commit_times, communication_trips, ks_two_sample, mean_utilization, sync_troughs,
    time_to_target_loss, updates_per_hour, utilization_series, KsResult,
};
use crate::orchestrator::{EventRecord, TaskMode};
use crate::scenario::Scenario;
use crate::simulator::{SimOutcome, StopReason, World};
use crate::time::to_secs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub mode: TaskMode,
    pub concurrency: usize,
    pub aggregation_goal: usize,
    pub versions: u64,
    pub trips: u64,
    pub accepted: u64,
    pub discarded: u64,
    pub aborted: u64,
    pub dead: u64,
    pub buffered_lost: u64,
    pub updates_per_hour: f64,
    /// Time-weighted mean of working sessions after the warm-up.
    pub mean_utilization: f64,
    /// `mean_utilization / concurrency`.
    pub utilization_fraction: f64,
    /// Mean over rounds of the post-peak minimum of working sessions.
    pub mean_round_trough: Option<f64>,
    pub max_round_trough: Option<usize>,
    pub time_to_target_s: Option<f64>,
    pub trips_to_target: Option<u64>,
    pub final_loss: f64,
    /// Example counts of accepted updates against the whole population.
    pub participant_ks: Option<KsResult>,
    pub model_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub stop: String,
    pub stopped_by: String,
    pub end_time_s: f64,
    pub events_processed: u64,
    pub target_loss: Option<f64>,
    pub log_records: usize,
    pub log_sha256: String,
    pub tasks: Vec<TaskSummary>,
}

pub(crate) fn log_digest(log: &[EventRecord]) -> String {
    let mut h = Sha256::new();
    for r in log {
        h.update(serde_json::to_vec(r).expect("records serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn params_digest(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Every reported quantity, computed from the log except the final model
/// and its loss.
pub fn summarize(scenario: &Scenario, outcome: &SimOutcome, world: &World) -> RunSummary {
    let end = outcome.end_time;
    let warm = (end as f64 * scenario.simulation.warmup_fraction) as u64;
    let population: Vec<f64> = world.population.iter().map(|c| c.num_examples as f64).collect();
    let target = outcome.target_loss;
    let tasks = scenario
        .tasks
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let t = i as u32;
            let log = &outcome.log;
            let counters = super::replay_counters(log, t);
            let series = utilization_series(log, t);
            let mean = mean_utilization(&series, warm, end);
            let commits = commit_times(log, t);
            let troughs = sync_troughs(&series, &commits);
            let ttt = target.and_then(|x| time_to_target_loss(log, t, x));
            let participants = accepted_examples(log, t);
            TaskSummary {
                task_id: cfg.task_id.clone(),
                mode: cfg.mode,
                concurrency: cfg.concurrency,
                aggregation_goal: cfg.effective_goal(),
                versions: outcome.final_models[i].version,
                trips: counters.trips,
                accepted: counters.accepted,
                discarded: counters.discarded,
                aborted: counters.aborted,
                dead: counters.dead,
                buffered_lost: counters.buffered_lost,
                updates_per_hour: updates_per_hour(log, t, 0, end),
                mean_utilization: mean,
                utilization_fraction: mean / cfg.concurrency as f64,
                mean_round_trough: (!troughs.is_empty())
                    .then(|| troughs.iter().sum::<usize>() as f64 / troughs.len() as f64),
                max_round_trough: troughs.iter().max().copied(),
                time_to_target_s: ttt.map(to_secs),
                trips_to_target: ttt.map(|at| communication_trips(log, t, Some(at))),
                final_loss: outcome.final_loss[i],
                participant_ks: ks_two_sample(&participants, &population).ok(),
                model_sha256: params_digest(&outcome.final_models[i].params),
            }
        })
        .collect();
    RunSummary {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        stop: scenario.stop.to_string(),
        stopped_by: match outcome.stop_reason {
            StopReason::Rule => "rule".into(),
            StopReason::Idle => "idle".into(),
        },
        end_time_s: to_secs(end),
        events_processed: outcome.events_processed,
        target_loss: target,
        log_records: outcome.log.len(),
        log_sha256: log_digest(&outcome.log),
        tasks,
    }
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}
