use crate::orchestrator::{EntityKind, EventRecord, TaskCounters, Transition};

/// Rebuilds a task's online counters from its log alone.
pub fn replay_counters(log: &[EventRecord], task: u32) -> TaskCounters {
    let mut c = TaskCounters::default();
    for r in log.iter().filter(|r| r.task == Some(task)) {
        match (r.entity, r.transition) {
            (EntityKind::Server, Transition::UploadReceived) => c.trips += 1,
            (EntityKind::Server, Transition::UpdateAccepted) => c.accepted += 1,
            (EntityKind::Server, Transition::UpdateDiscarded | Transition::SecaggRejected) => c.discarded += 1,
            (EntityKind::Server, Transition::VersionCommitted) => c.commits += 1,
            (EntityKind::Server, Transition::BufferDiscarded) => c.buffered_lost += r.value.unwrap_or(0.0) as u64,
            (EntityKind::Client, Transition::Aborted) => c.aborted += 1,
            (EntityKind::Client, Transition::Dead) => c.dead += 1,
            _ => {}
        }
    }
    c
}
