use serde::{Deserialize, Serialize};

use crate::time::Micros;

/// Which component emitted a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Client,
    Selector,
    Aggregator,
    Coordinator,
    Server,
}

/// Every transition the orchestrator and simulator log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    // client session lifecycle
    Selected,
    Downloading,
    Training,
    Reporting,
    Uploading,
    Done,
    Dead,
    Aborted,
    // server side of an upload
    UploadReceived,
    UpdateAccepted,
    UpdateDiscarded,
    VersionCommitted,
    Evaluated,
    BufferDiscarded,
    SecaggRejected,
    RoundStalled,
    // cluster control plane
    RouteRetry,
    RouteFailed,
    AggregatorFailed,
    AggregatorDeclaredDead,
    TaskPlaced,
    CoordinatorFailed,
    CoordinatorRecovered,
}

impl Transition {
    pub fn as_str(self) -> &'static str {
        match self {
            Transition::Selected => "selected",
            Transition::Downloading => "downloading",
            Transition::Training => "training",
            Transition::Reporting => "reporting",
            Transition::Uploading => "uploading",
            Transition::Done => "done",
            Transition::Dead => "dead",
            Transition::Aborted => "aborted",
            Transition::UploadReceived => "upload_received",
            Transition::UpdateAccepted => "update_accepted",
            Transition::UpdateDiscarded => "update_discarded",
            Transition::VersionCommitted => "version_committed",
            Transition::Evaluated => "evaluated",
            Transition::BufferDiscarded => "buffer_discarded",
            Transition::SecaggRejected => "secagg_rejected",
            Transition::RoundStalled => "round_stalled",
            Transition::RouteRetry => "route_retry",
            Transition::RouteFailed => "route_failed",
            Transition::AggregatorFailed => "aggregator_failed",
            Transition::AggregatorDeclaredDead => "aggregator_declared_dead",
            Transition::TaskPlaced => "task_placed",
            Transition::CoordinatorFailed => "coordinator_failed",
            Transition::CoordinatorRecovered => "coordinator_recovered",
        }
    }
}

/// One structured log line.
///
/// `value` carries the transition's numeric payload: the example count for
/// `update_accepted`, the held-out loss for `evaluated`, the number of
/// dropped updates for `buffer_discarded`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: Micros,
    pub entity: EntityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub transition: Transition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl EventRecord {
    pub fn new(t: Micros, entity: EntityKind, transition: Transition) -> Self {
        Self { t, entity, id: None, transition, task: None, version: None, session: None, value: None }
    }

    pub fn id(mut self, id: u64) -> Self {
        self.id = Some(id);
        self
    }

    pub fn task(mut self, task: usize) -> Self {
        self.task = Some(task as u32);
        self
    }

    pub fn version(mut self, version: u64) -> Self {
        self.version = Some(version);
        self
    }

    pub fn session(mut self, session: u64) -> Self {
        self.session = Some(session);
        self
    }

    pub fn value(mut self, value: f64) -> Self {
        self.value = Some(value);
        self
    }
}

/// Destination for event records.
pub trait EventSink {
    fn record(&mut self, record: EventRecord);
}

impl EventSink for Vec<EventRecord> {
    fn record(&mut self, record: EventRecord) {
        self.push(record);
    }
}

/// Discards everything; handy in unit tests.
#[derive(Debug, Default)]
pub struct NullSink;

impl EventSink for NullSink {
    fn record(&mut self, _: EventRecord) {}
}
