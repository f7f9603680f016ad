//! The only place where synchronous and asynchronous training differ:
//! how demand is computed, which sessions a version bump makes stale, and
//! which updates the aggregation accepts.

use std::fmt::Debug;

use super::config::{over_selected, TaskConfig, TaskMode};
use super::session::SessionState;

/// Counts a task's demand is computed from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DemandInputs {
    /// Non-terminal sessions.
    pub active: usize,
    /// Assignments handed out but not yet confirmed.
    pub pending: usize,
    /// Updates already in the open buffer generation.
    pub landed: usize,
}

pub trait Regime: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Additional clients the task wants right now; zero or negative means none.
    fn client_demand(&self, inputs: DemandInputs) -> i64;

    /// Bound on active plus pending sessions.
    fn concurrency_bound(&self) -> usize;

    /// Updates per server version.
    fn aggregation_goal(&self) -> usize;

    /// Whether an update trained from `initial_version` counts toward the open generation.
    fn accepts(&self, initial_version: u64, current_version: u64) -> bool;

    /// Whether a live session must be aborted now that the model is at `current_version`.
    fn is_stale(&self, state: SessionState, initial_version: u64, current_version: u64) -> bool;
}

/// Rounds of `concurrency` updates with over-selection. Stragglers from a
/// closed round are aborted unless already uploading; their uploads are discarded.
#[derive(Debug, Clone)]
pub struct SyncRegime {
    pub concurrency: usize,
    pub over_selection: f64,
}

impl Regime for SyncRegime {
    fn name(&self) -> &'static str {
        "sync"
    }

    fn client_demand(&self, d: DemandInputs) -> i64 {
        self.concurrency_bound() as i64 - d.landed as i64 - d.active as i64 - d.pending as i64
    }

    fn concurrency_bound(&self) -> usize {
        over_selected(self.concurrency, self.over_selection)
    }

    fn aggregation_goal(&self) -> usize {
        self.concurrency
    }

    fn accepts(&self, initial_version: u64, current_version: u64) -> bool {
        initial_version == current_version
    }

    fn is_stale(&self, state: SessionState, initial_version: u64, current_version: u64) -> bool {
        initial_version < current_version && state != SessionState::Uploading
    }
}

/// Continuous buffered aggregation with a staleness cap.
#[derive(Debug, Clone)]
pub struct AsyncRegime {
    pub concurrency: usize,
    pub goal: usize,
    pub max_staleness: Option<u64>,
    /// Stop selecting once the open generation is fully covered by landed and
    /// in-flight updates.
    pub barrier: bool,
}

impl AsyncRegime {
    fn too_stale(&self, initial_version: u64, current_version: u64) -> bool {
        match self.max_staleness {
            Some(max) => current_version.saturating_sub(initial_version) > max,
            None => false,
        }
    }
}

impl Regime for AsyncRegime {
    fn name(&self) -> &'static str {
        "async"
    }

    fn client_demand(&self, d: DemandInputs) -> i64 {
        let landed = if self.barrier { d.landed as i64 } else { 0 };
        self.concurrency as i64 - d.active as i64 - d.pending as i64 - landed
    }

    fn concurrency_bound(&self) -> usize {
        self.concurrency
    }

    fn aggregation_goal(&self) -> usize {
        self.goal
    }

    fn accepts(&self, initial_version: u64, current_version: u64) -> bool {
        !self.too_stale(initial_version, current_version)
    }

    fn is_stale(&self, _state: SessionState, initial_version: u64, current_version: u64) -> bool {
        self.too_stale(initial_version, current_version)
    }
}

/// Builds the regime a task's configuration asks for.
pub fn regime_for(config: &TaskConfig) -> Box<dyn Regime> {
    match config.mode {
        TaskMode::Sync => {
            Box::new(SyncRegime { concurrency: config.concurrency, over_selection: config.over_selection })
        }
        TaskMode::Async => Box::new(AsyncRegime {
            concurrency: config.concurrency,
            goal: config.effective_goal(),
            max_staleness: config.max_staleness,
            barrier: config.barrier,
        }),
    }
}

/// Demand of a task under its regime.
pub fn compute_client_demand(regime: &dyn Regime, inputs: DemandInputs) -> i64 {
    regime.client_demand(inputs)
}

/// Admission check for one more selection.
pub fn enforce_max_concurrency(regime: &dyn Regime, active: usize, pending: usize) -> bool {
    active + pending < regime.concurrency_bound()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(active: usize, pending: usize, landed: usize) -> DemandInputs {
        DemandInputs { active, pending, landed }
    }

    #[test]
    fn demand_examples() {
        let a = regime_for(&TaskConfig::new_async("a", 100, 10));
        assert_eq!(compute_client_demand(a.as_ref(), inputs(97, 0, 0)), 3);
        assert_eq!(compute_client_demand(a.as_ref(), inputs(97, 0, 5)), 3);
        let s = regime_for(&TaskConfig::new_sync("s", 100, 0.3));
        assert_eq!(compute_client_demand(s.as_ref(), inputs(0, 0, 0)), 130);
        assert_eq!(compute_client_demand(s.as_ref(), inputs(0, 0, 130)), 0);
        assert_eq!(compute_client_demand(s.as_ref(), inputs(30, 0, 100)), 0);
        assert_eq!(compute_client_demand(s.as_ref(), inputs(20, 5, 100)), 5);
    }

    #[test]
    fn barrier_counts_landed_updates() {
        let mut c = TaskConfig::new_async("a", 8, 8);
        c.barrier = true;
        let r = regime_for(&c);
        assert_eq!(r.client_demand(inputs(5, 0, 3)), 0);
        assert_eq!(r.client_demand(inputs(4, 0, 3)), 1);
    }

    #[test]
    fn concurrency_bound_examples() {
        let mut c = TaskConfig::new_async("a", 2, 1);
        let r = regime_for(&c);
        assert!(!enforce_max_concurrency(r.as_ref(), 2, 0));
        assert!(!enforce_max_concurrency(r.as_ref(), 1, 1));
        assert!(enforce_max_concurrency(r.as_ref(), 1, 0));
        c.concurrency = 4;
        assert!(enforce_max_concurrency(regime_for(&c).as_ref(), 2, 1));
    }

    #[test]
    fn staleness_threshold_is_strict() {
        let mut c = TaskConfig::new_async("a", 4, 2);
        c.max_staleness = Some(10);
        let r = regime_for(&c);
        assert!(r.is_stale(SessionState::Training, 0, 11));
        assert!(!r.is_stale(SessionState::Training, 0, 10));
        assert!(r.accepts(0, 10));
        assert!(!r.accepts(0, 11));
        c.max_staleness = None;
        assert!(!regime_for(&c).is_stale(SessionState::Training, 0, u64::MAX));
    }

    #[test]
    fn sync_aborts_stragglers_but_lets_uploads_finish() {
        let r = regime_for(&TaskConfig::new_sync("s", 4, 0.25));
        assert!(r.is_stale(SessionState::Training, 3, 4));
        assert!(r.is_stale(SessionState::Reporting, 3, 4));
        assert!(!r.is_stale(SessionState::Uploading, 3, 4));
        assert!(!r.is_stale(SessionState::Training, 4, 4));
        assert!(!r.accepts(3, 4));
        assert!(r.accepts(4, 4));
    }

    /// The rest of the orchestrator and the simulator must never branch on the mode.
    #[test]
    fn mode_is_only_inspected_here_and_in_config() {
        let sources = [
            ("buffer.rs", include_str!("buffer.rs")),
            ("cluster.rs", include_str!("cluster.rs")),
            ("runtime.rs", include_str!("runtime.rs")),
            ("session.rs", include_str!("session.rs")),
            ("events.rs", include_str!("events.rs")),
            ("mod.rs", include_str!("mod.rs")),
            ("simulator/engine.rs", include_str!("../simulator/engine.rs")),
            ("simulator/mod.rs", include_str!("../simulator/mod.rs")),
        ];
        for (name, src) in sources {
            for needle in ["TaskMode::", ".mode ==", ".mode {", "SyncRegime", "AsyncRegime"] {
                assert!(!src.contains(needle), "{name} mentions {needle}");
            }
        }
    }
}
