use crate::orchestrator::{EventRecord, Transition};
use crate::time::{Micros, MICROS_PER_SEC};

const MICROS_PER_HOUR: f64 = 3600.0 * MICROS_PER_SEC as f64;

fn of_task(log: &[EventRecord], task: u32, t: Transition) -> impl Iterator<Item = &EventRecord> {
    log.iter().filter(move |r| r.task == Some(task) && r.transition == t)
}

pub fn commit_times(log: &[EventRecord], task: u32) -> Vec<Micros> {
    of_task(log, task, Transition::VersionCommitted).map(|r| r.t).collect()
}

/// Version increments per virtual hour over `[from, to)`.
pub fn updates_per_hour(log: &[EventRecord], task: u32, from: Micros, to: Micros) -> f64 {
    if to <= from {
        return 0.0;
    }
    let n = of_task(log, task, Transition::VersionCommitted).filter(|r| r.t >= from && r.t < to).count();
    n as f64 * MICROS_PER_HOUR / (to - from) as f64
}

/// Rate in consecutive windows of length `window` ending at or before `end`.
pub fn server_updates_per_hour(log: &[EventRecord], task: u32, window: Micros, end: Micros) -> Vec<(Micros, f64)> {
    assert!(window > 0, "window must be positive");
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= end {
        out.push((start, updates_per_hour(log, task, start, start + window)));
        start += window;
    }
    out
}

/// Uploads that reached the server up to and including `until`, whether
/// used or discarded.
pub fn communication_trips(log: &[EventRecord], task: u32, until: Option<Micros>) -> u64 {
    of_task(log, task, Transition::UploadReceived).filter(|r| until.is_none_or(|u| r.t <= u)).count() as u64
}

/// `(time, version, loss)` of each server evaluation.
pub fn eval_series(log: &[EventRecord], task: u32) -> Vec<(Micros, u64, f64)> {
    of_task(log, task, Transition::Evaluated)
        .map(|r| (r.t, r.version.unwrap_or(0), r.value.unwrap_or(f64::NAN)))
        .collect()
}

/// First evaluation at or below `target`; `None` if never reached.
pub fn time_to_target_loss(log: &[EventRecord], task: u32, target: f64) -> Option<Micros> {
    of_task(log, task, Transition::Evaluated).find(|r| r.value.is_some_and(|l| l <= target)).map(|r| r.t)
}

/// Example counts of the accepted updates, one entry per update.
pub fn accepted_examples(log: &[EventRecord], task: u32) -> Vec<f64> {
    of_task(log, task, Transition::UpdateAccepted).filter_map(|r| r.value).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::EntityKind;

    fn server(t: Micros, tr: Transition) -> EventRecord {
        EventRecord::new(t, EntityKind::Server, tr).task(0)
    }

    #[test]
    fn trips_count_discards_too() {
        let mut log = Vec::new();
        for i in 0..5 {
            log.push(server(i, Transition::UploadReceived));
        }
        log.push(server(5, Transition::UpdateDiscarded));
        assert_eq!(communication_trips(&log, 0, None), 5);
        assert_eq!(communication_trips(&log, 0, Some(2)), 3);
        assert_eq!(communication_trips(&log, 1, None), 0);
    }

    #[test]
    fn rates() {
        let hour = 3_600_000_000;
        let log: Vec<_> = (0..10).map(|i| server(i * hour / 10, Transition::VersionCommitted)).collect();
        assert!((updates_per_hour(&log, 0, 0, hour) - 10.0).abs() < 1e-9);
        assert!((updates_per_hour(&log, 0, 0, 2 * hour) - 5.0).abs() < 1e-9);
        let series = server_updates_per_hour(&log, 0, hour / 2, hour);
        assert_eq!(series.len(), 2);
        assert!(series.iter().all(|(_, r)| (r - 10.0).abs() < 1e-9));
        assert_eq!(updates_per_hour(&[], 0, 0, hour), 0.0);
    }

    #[test]
    fn time_to_target() {
        let log = vec![
            server(0, Transition::Evaluated).value(5.0),
            server(10, Transition::Evaluated).value(2.0),
            server(20, Transition::Evaluated).value(1.0),
        ];
        assert_eq!(time_to_target_loss(&log, 0, 10.0), Some(0));
        assert_eq!(time_to_target_loss(&log, 0, 1.5), Some(20));
        assert_eq!(time_to_target_loss(&log, 0, 0.5), None);
    }
}
