use std::collections::BTreeSet;

use crate::orchestrator::{EventRecord, Transition};
use crate::time::Micros;

/// Number of working sessions from `t` until the next point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UtilizationPoint {
    pub t: Micros,
    pub active: usize,
}

/// Step function of sessions between `downloading` and their terminal record.
/// Several records at one instant collapse into a single point.
pub fn utilization_series(log: &[EventRecord], task: u32) -> Vec<UtilizationPoint> {
    let mut working = BTreeSet::new();
    let mut series: Vec<UtilizationPoint> = Vec::new();
    for r in log.iter().filter(|r| r.task == Some(task)) {
        let Some(session) = r.session else { continue };
        let changed = match r.transition {
            Transition::Downloading => working.insert(session),
            Transition::Done | Transition::Dead | Transition::Aborted => working.remove(&session),
            _ => false,
        };
        if !changed {
            continue;
        }
        match series.last_mut() {
            Some(p) if p.t == r.t => p.active = working.len(),
            _ => series.push(UtilizationPoint { t: r.t, active: working.len() }),
        }
    }
    series
}

/// Time-weighted mean of the step function over `[from, to)`.
pub fn mean_utilization(series: &[UtilizationPoint], from: Micros, to: Micros) -> f64 {
    if to <= from {
        return 0.0;
    }
    let mut area = 0.0;
    let mut level = 0usize;
    let mut cursor = from;
    for p in series {
        if p.t > from {
            let until = p.t.min(to);
            if until > cursor {
                area += level as f64 * (until - cursor) as f64;
                cursor = until;
            }
        }
        if p.t >= to {
            break;
        }
        level = p.active;
    }
    if to > cursor {
        area += level as f64 * (to - cursor) as f64;
    }
    area / (to - from) as f64
}

/// Lowest utilization after the peak of each round, where a round ends at a
/// version commit. Rounds with no activity are skipped.
pub fn sync_troughs(series: &[UtilizationPoint], commits: &[Micros]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut start = 0;
    for &end in commits {
        // levels in force during (start, end), excluding the commit instant
        let levels: Vec<usize> = series.iter().filter(|p| p.t >= start && p.t < end).map(|p| p.active).collect();
        start = end;
        let Some((peak_at, _)) = levels.iter().enumerate().max_by_key(|(i, v)| (**v, std::cmp::Reverse(*i))) else {
            continue;
        };
        if let Some(trough) = levels[peak_at..].iter().min() {
            out.push(*trough);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::EntityKind;

    fn rec(t: Micros, tr: Transition, s: u64) -> EventRecord {
        EventRecord::new(t, EntityKind::Client, tr).task(0).session(s)
    }

    #[test]
    fn empty_log_gives_empty_series() {
        assert!(utilization_series(&[], 0).is_empty());
        assert_eq!(mean_utilization(&[], 0, 10), 0.0);
    }

    #[test]
    fn step_function_and_mean() {
        let log = vec![
            rec(0, Transition::Selected, 1),
            rec(0, Transition::Downloading, 1),
            rec(10, Transition::Downloading, 2),
            rec(20, Transition::Done, 1),
            rec(30, Transition::Dead, 2),
        ];
        let s = utilization_series(&log, 0);
        assert_eq!(
            s,
            vec![
                UtilizationPoint { t: 0, active: 1 },
                UtilizationPoint { t: 10, active: 2 },
                UtilizationPoint { t: 20, active: 1 },
                UtilizationPoint { t: 30, active: 0 },
            ]
        );
        // (1*10 + 2*10 + 1*10) / 40
        assert!((mean_utilization(&s, 0, 40) - 1.0).abs() < 1e-12);
        assert!((mean_utilization(&s, 10, 20) - 2.0).abs() < 1e-12);
        assert!((mean_utilization(&s, 5, 15) - 1.5).abs() < 1e-12);
        assert!(utilization_series(&log, 1).is_empty());
    }

    #[test]
    fn trough_is_taken_after_the_peak() {
        let s = [
            UtilizationPoint { t: 0, active: 1 },
            UtilizationPoint { t: 1, active: 5 },
            UtilizationPoint { t: 2, active: 3 },
            UtilizationPoint { t: 3, active: 2 },
            UtilizationPoint { t: 4, active: 0 },
            UtilizationPoint { t: 5, active: 4 },
            UtilizationPoint { t: 6, active: 1 },
        ];
        assert_eq!(sync_troughs(&s, &[4, 7]), vec![2, 1]);
    }
}
