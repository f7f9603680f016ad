use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::events::{EntityKind, EventRecord, EventSink, Transition};
use super::regime::enforce_max_concurrency;
use super::runtime::TaskRuntime;
use super::session::{SessionId, SessionState};
use super::OrchestratorError;
use crate::rng;
use crate::time::{from_secs, Micros};

/// Control-plane parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub aggregators: usize,
    pub selectors: usize,
    pub heartbeat_interval_s: f64,
    /// Consecutive missed heartbeats before an aggregator is declared dead.
    pub missed_heartbeats: u32,
    /// Assignment pause after a coordinator restart.
    pub recovery_period_s: f64,
    /// Intermediate accumulators per aggregation buffer.
    pub aggregation_shards: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            aggregators: 2,
            selectors: 2,
            heartbeat_interval_s: 5.0,
            missed_heartbeats: 3,
            recovery_period_s: 30.0,
            aggregation_shards: 4,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), super::ConfigError> {
        use super::ConfigError;
        if self.aggregators == 0 {
            return Err(ConfigError::invalid("cluster", "aggregators", "must be positive"));
        }
        if self.selectors == 0 {
            return Err(ConfigError::invalid("cluster", "selectors", "must be positive"));
        }
        if !(self.heartbeat_interval_s > 0.0 && self.heartbeat_interval_s.is_finite()) {
            return Err(ConfigError::invalid("cluster", "heartbeat_interval_s", "must be positive"));
        }
        if self.missed_heartbeats == 0 {
            return Err(ConfigError::invalid("cluster", "missed_heartbeats", "must be positive"));
        }
        if !(self.recovery_period_s >= 0.0 && self.recovery_period_s.is_finite()) {
            return Err(ConfigError::invalid("cluster", "recovery_period_s", "must be non-negative"));
        }
        if self.aggregation_shards == 0 {
            return Err(ConfigError::invalid("cluster", "aggregation_shards", "must be positive"));
        }
        Ok(())
    }
}

/// Tasks a client can run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ClientCapabilities {
    #[default]
    All,
    Only(BTreeSet<usize>),
}

impl ClientCapabilities {
    pub fn supports(&self, task: usize) -> bool {
        match self {
            ClientCapabilities::All => true,
            ClientCapabilities::Only(set) => set.contains(&task),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingAssignment {
    pub client_id: u64,
    pub expires_at: Micros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    NoDemand,
    CoordinatorRecovering,
    Unroutable,
}

/// Single-writer task placement and client assignment.
#[derive(Debug)]
pub struct Coordinator {
    owners: Vec<usize>,
    seq: u64,
    missed: Vec<u32>,
    declared_dead: Vec<bool>,
    pending: Vec<Vec<PendingAssignment>>,
    paused_until: Option<Micros>,
    missed_limit: u32,
    pending_ttl: Vec<Micros>,
    rng: ChaCha8Rng,
}

impl Coordinator {
    /// Places tasks on aggregators, heaviest first onto the least-loaded one.
    pub fn new(task_loads: &[f64], pending_ttl: Vec<Micros>, aggregators: usize, missed_limit: u32, seed: u64) -> Self {
        let mut coordinator = Self {
            owners: vec![0; task_loads.len()],
            seq: 0,
            missed: vec![0; aggregators],
            declared_dead: vec![false; aggregators],
            pending: vec![Vec::new(); task_loads.len()],
            paused_until: None,
            missed_limit,
            pending_ttl,
            rng: rng::stream(seed, "coordinator", 0),
        };
        let all: Vec<usize> = (0..task_loads.len()).collect();
        coordinator.place(&all, task_loads);
        coordinator
    }

    fn place(&mut self, tasks: &[usize], task_loads: &[f64]) {
        let live: Vec<usize> = (0..self.declared_dead.len()).filter(|a| !self.declared_dead[*a]).collect();
        let mut load = vec![0.0; self.declared_dead.len()];
        for (t, owner) in self.owners.iter().enumerate() {
            if !tasks.contains(&t) {
                load[*owner] += task_loads[t];
            }
        }
        let mut order = tasks.to_vec();
        order.sort_by(|a, b| task_loads[*b].total_cmp(&task_loads[*a]).then(a.cmp(b)));
        for t in order {
            let target = *live
                .iter()
                .min_by(|a, b| load[**a].total_cmp(&load[**b]).then(a.cmp(b)))
                .expect("at least one live aggregator");
            self.owners[t] = target;
            load[target] += task_loads[t];
        }
        self.seq += 1;
    }

    pub fn owner(&self, task: usize) -> usize {
        self.owners[task]
    }

    pub fn owners(&self) -> &[usize] {
        &self.owners
    }

    /// Version of the assignment map; bumps on every placement change.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn is_paused(&self, now: Micros) -> bool {
        self.paused_until.is_some_and(|until| now < until)
    }

    pub fn paused_until(&self) -> Option<Micros> {
        self.paused_until
    }

    pub fn expire_pending(&mut self, now: Micros) {
        for list in &mut self.pending {
            list.retain(|p| p.expires_at > now);
        }
    }

    pub fn pending_count(&self, task: usize) -> usize {
        self.pending[task].len()
    }

    fn suspected(&self, aggregator: usize) -> bool {
        self.missed[aggregator] > 0 || self.declared_dead[aggregator]
    }

    /// Picks uniformly among tasks the client supports that still want
    /// clients, and records a pending assignment.
    pub fn assign_client(
        &mut self,
        now: Micros,
        client_id: u64,
        capabilities: &ClientCapabilities,
        tasks: &[TaskRuntime],
    ) -> Result<usize, Rejection> {
        if self.is_paused(now) {
            return Err(Rejection::CoordinatorRecovering);
        }
        self.expire_pending(now);
        let eligible: Vec<usize> = tasks
            .iter()
            .filter(|t| {
                let pending = self.pending[t.index].len();
                capabilities.supports(t.index)
                    && !self.suspected(self.owners[t.index])
                    && t.demand(pending) > 0
                    && enforce_max_concurrency(t.regime(), t.active(), pending)
            })
            .map(|t| t.index)
            .collect();
        if eligible.is_empty() {
            return Err(Rejection::NoDemand);
        }
        let task = eligible[self.rng.gen_range(0..eligible.len())];
        self.pending[task].push(PendingAssignment { client_id, expires_at: now + self.pending_ttl[task] });
        Ok(task)
    }

    fn take_pending(&mut self, task: usize, client_id: u64) -> bool {
        match self.pending[task].iter().position(|p| p.client_id == client_id) {
            Some(i) => {
                self.pending[task].remove(i);
                true
            }
            None => false,
        }
    }

    /// The client reached the aggregator; the pending slot becomes a session.
    pub fn confirm(&mut self, task: usize, client_id: u64) -> bool {
        self.take_pending(task, client_id)
    }

    /// The assignment could not be completed.
    pub fn release(&mut self, task: usize, client_id: u64) -> bool {
        self.take_pending(task, client_id)
    }

    /// Processes one heartbeat round. Returns aggregators newly declared dead
    /// and the tasks moved off them.
    pub fn heartbeat(
        &mut self,
        alive: &[bool],
        task_loads: &[f64],
    ) -> Result<(Vec<usize>, Vec<usize>), OrchestratorError> {
        let mut newly_dead = Vec::new();
        for (a, up) in alive.iter().enumerate() {
            if self.declared_dead[a] {
                continue;
            }
            if *up {
                self.missed[a] = 0;
            } else {
                self.missed[a] += 1;
                if self.missed[a] >= self.missed_limit {
                    self.declared_dead[a] = true;
                    newly_dead.push(a);
                }
            }
        }
        if newly_dead.is_empty() {
            return Ok((newly_dead, Vec::new()));
        }
        if self.declared_dead.iter().all(|d| *d) {
            return Err(OrchestratorError::NoLiveAggregator);
        }
        let moved: Vec<usize> = (0..self.owners.len()).filter(|t| newly_dead.contains(&self.owners[*t])).collect();
        self.place(&moved, task_loads);
        for t in &moved {
            self.pending[*t].clear();
        }
        Ok((newly_dead, moved))
    }

    /// Restart: in-memory pending assignments are lost and selection pauses.
    pub fn fail(&mut self, now: Micros, recovery: Micros) {
        self.paused_until = Some(now + recovery);
        for list in &mut self.pending {
            list.clear();
        }
        self.missed.iter_mut().for_each(|m| *m = 0);
    }
}

/// A read-only, possibly outdated, copy of the assignment map.
#[derive(Debug, Clone)]
pub struct Selector {
    pub id: usize,
    map: Vec<usize>,
    seq: u64,
}

impl Selector {
    pub fn new(id: usize, coordinator: &Coordinator) -> Self {
        Self { id, map: coordinator.owners.clone(), seq: coordinator.seq }
    }

    pub fn refresh(&mut self, coordinator: &Coordinator) {
        if self.seq < coordinator.seq {
            self.map = coordinator.owners.clone();
            self.seq = coordinator.seq;
        }
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn route(&self, task: usize) -> usize {
        self.map[task]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckIn {
    Assigned { task: usize, session: SessionId },
    Rejected(Rejection),
}

/// Coordinator, selectors, aggregators and the tasks they host.
#[derive(Debug)]
pub struct Cluster {
    pub config: ClusterConfig,
    pub coordinator: Coordinator,
    pub selectors: Vec<Selector>,
    pub alive: Vec<bool>,
    pub tasks: Vec<TaskRuntime>,
    task_loads: Vec<f64>,
    next_session: u64,
    ticks: u64,
    route_rng: ChaCha8Rng,
}

impl Cluster {
    /// `task_loads` estimates each task's cost, e.g. concurrency times model size.
    pub fn new(config: ClusterConfig, tasks: Vec<TaskRuntime>, task_loads: Vec<f64>, seed: u64) -> Self {
        let ttl = tasks.iter().map(|t| from_secs(t.config.client_timeout_s)).collect();
        let coordinator = Coordinator::new(&task_loads, ttl, config.aggregators, config.missed_heartbeats, seed);
        let selectors = (0..config.selectors).map(|i| Selector::new(i, &coordinator)).collect();
        Self {
            config,
            coordinator,
            selectors,
            alive: vec![true; config.aggregators],
            tasks,
            task_loads,
            next_session: 0,
            ticks: 0,
            route_rng: rng::stream(seed, "selector-routing", 0),
        }
    }

    pub fn log_placement(&self, now: Micros, sink: &mut dyn EventSink) {
        for (t, owner) in self.coordinator.owners().iter().enumerate() {
            sink.record(EventRecord::new(now, EntityKind::Coordinator, Transition::TaskPlaced).id(*owner as u64).task(t));
        }
    }

    /// Demand of `task` as the coordinator sees it, pending assignments included.
    pub fn demand(&self, task: usize) -> i64 {
        self.tasks[task].demand(self.coordinator.pending_count(task))
    }

    pub fn any_demand(&self, now: Micros) -> bool {
        !self.coordinator.is_paused(now) && (0..self.tasks.len()).any(|t| self.demand(t) > 0)
    }

    /// Selection followed by routing through a selector to the owning
    /// aggregator. A failed route makes that selector refresh its map, and
    /// the client retries through the next selector.
    pub fn check_in(
        &mut self,
        now: Micros,
        client_id: u64,
        capabilities: &ClientCapabilities,
        sink: &mut dyn EventSink,
    ) -> Result<CheckIn, OrchestratorError> {
        let task = match self.coordinator.assign_client(now, client_id, capabilities, &self.tasks) {
            Ok(t) => t,
            Err(r) => return Ok(CheckIn::Rejected(r)),
        };
        let first = self.route_rng.gen_range(0..self.selectors.len());
        // Sequence number of the freshest map seen so far on this check-in;
        // a retry through an older snapshot refreshes it first.
        let mut seen_seq = 0;
        for attempt in 0..self.selectors.len() {
            let sel = (first + attempt) % self.selectors.len();
            if self.selectors[sel].seq() < seen_seq {
                self.selectors[sel].refresh(&self.coordinator);
            }
            let target = self.selectors[sel].route(task);
            if self.alive[target] && self.coordinator.owner(task) == target {
                self.coordinator.confirm(task, client_id);
                let id = SessionId(self.next_session);
                self.next_session += 1;
                self.tasks[task].admit(now, id, client_id, sink)?;
                return Ok(CheckIn::Assigned { task, session: id });
            }
            sink.record(
                EventRecord::new(now, EntityKind::Selector, Transition::RouteRetry)
                    .id(sel as u64)
                    .task(task)
                    .value(self.selectors[sel].seq() as f64),
            );
            self.selectors[sel].refresh(&self.coordinator);
            seen_seq = seen_seq.max(self.selectors[sel].seq());
        }
        self.coordinator.release(task, client_id);
        sink.record(EventRecord::new(now, EntityKind::Client, Transition::RouteFailed).id(client_id).task(task));
        Ok(CheckIn::Rejected(Rejection::Unroutable))
    }

    /// Advances a session, failing it if its aggregator is gone.
    pub fn advance(
        &mut self,
        now: Micros,
        task: usize,
        session: SessionId,
        to: SessionState,
        sink: &mut dyn EventSink,
    ) -> Result<(), OrchestratorError> {
        self.tasks[task].advance(now, session, to, sink)
    }

    pub fn fail_aggregator(&mut self, now: Micros, aggregator: usize, sink: &mut dyn EventSink) {
        if !self.alive[aggregator] {
            return;
        }
        self.alive[aggregator] = false;
        sink.record(EventRecord::new(now, EntityKind::Aggregator, Transition::AggregatorFailed).id(aggregator as u64));
        for t in 0..self.tasks.len() {
            if self.coordinator.owner(t) == aggregator {
                self.tasks[t].fail_volatile_state(now, sink);
            }
        }
    }

    pub fn fail_coordinator(&mut self, now: Micros, sink: &mut dyn EventSink) -> Micros {
        let until = now + from_secs(self.config.recovery_period_s);
        self.coordinator.fail(now, from_secs(self.config.recovery_period_s));
        sink.record(EventRecord::new(now, EntityKind::Coordinator, Transition::CoordinatorFailed).value(self.config.recovery_period_s));
        until
    }

    pub fn recover_coordinator(&mut self, now: Micros, sink: &mut dyn EventSink) {
        sink.record(EventRecord::new(now, EntityKind::Coordinator, Transition::CoordinatorRecovered));
    }

    /// One heartbeat interval: failure detection, reassignment, pending
    /// expiry and a staggered selector refresh.
    pub fn heartbeat_tick(&mut self, now: Micros, sink: &mut dyn EventSink) -> Result<(), OrchestratorError> {
        self.ticks += 1;
        if self.coordinator.is_paused(now) {
            return Ok(());
        }
        let (dead, moved) = self.coordinator.heartbeat(&self.alive, &self.task_loads)?;
        for a in dead {
            sink.record(EventRecord::new(now, EntityKind::Coordinator, Transition::AggregatorDeclaredDead).id(a as u64));
        }
        for t in moved {
            sink.record(
                EventRecord::new(now, EntityKind::Coordinator, Transition::TaskPlaced)
                    .id(self.coordinator.owner(t) as u64)
                    .task(t),
            );
        }
        self.coordinator.expire_pending(now);
        let s = (self.ticks % self.selectors.len() as u64) as usize;
        self.selectors[s].refresh(&self.coordinator);
        Ok(())
    }

    pub fn commits(&self) -> u64 {
        self.tasks.iter().map(|t| t.counters().commits).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::config::TaskConfig;
    use crate::orchestrator::events::NullSink;

    fn runtime(index: usize, c: usize, k: usize) -> TaskRuntime {
        TaskRuntime::new(index, TaskConfig::new_async(&format!("t{index}"), c, k), vec![0.0; 2], 9, 2).unwrap()
    }

    #[test]
    fn pending_assignment_blocks_second_client() {
        let tasks = vec![runtime(0, 1, 1)];
        let mut c = Coordinator::new(&[1.0], vec![1_000], 1, 3, 0);
        assert_eq!(c.assign_client(0, 1, &ClientCapabilities::All, &tasks), Ok(0));
        assert_eq!(c.assign_client(0, 2, &ClientCapabilities::All, &tasks), Err(Rejection::NoDemand));
        // the unconfirmed assignment expires after its time-to-live
        assert_eq!(c.assign_client(1_000, 2, &ClientCapabilities::All, &tasks), Ok(0));
        assert!(c.release(0, 2));
        assert_eq!(c.pending_count(0), 0);
    }

    #[test]
    fn no_demand_is_rejected() {
        let mut tasks = vec![runtime(0, 1, 1)];
        let mut sink = NullSink;
        tasks[0].admit(0, SessionId(0), 5, &mut sink).unwrap();
        let mut c = Coordinator::new(&[1.0], vec![1_000], 1, 3, 0);
        assert_eq!(c.assign_client(0, 1, &ClientCapabilities::All, &tasks), Err(Rejection::NoDemand));
    }

    #[test]
    fn assignment_is_uniform_over_eligible_tasks() {
        let tasks = vec![runtime(0, 10, 1), runtime(1, 10, 1)];
        let mut c = Coordinator::new(&[1.0, 1.0], vec![1_000, 1_000], 2, 3, 42);
        let mut first = 0;
        for i in 0..10_000 {
            let t = c.assign_client(0, i, &ClientCapabilities::All, &tasks).unwrap();
            first += (t == 0) as usize;
            c.release(t, i);
        }
        let frac = first as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn capabilities_filter_tasks() {
        let tasks = vec![runtime(0, 10, 1), runtime(1, 10, 1)];
        let mut c = Coordinator::new(&[1.0, 1.0], vec![1_000, 1_000], 1, 3, 1);
        let only = ClientCapabilities::Only([1].into_iter().collect());
        for i in 0..20 {
            assert_eq!(c.assign_client(0, i, &only, &tasks), Ok(1));
            c.release(1, i);
        }
    }

    #[test]
    fn placement_balances_load() {
        let c = Coordinator::new(&[5.0, 4.0, 3.0, 2.0], vec![1; 4], 2, 3, 0);
        let mut load = [0.0; 2];
        for (t, owner) in c.owners().iter().enumerate() {
            load[*owner] += [5.0, 4.0, 3.0, 2.0][t];
        }
        assert_eq!(load, [7.0, 7.0]);
    }

    #[test]
    fn dead_aggregator_detected_after_missed_beats() {
        let mut c = Coordinator::new(&[1.0, 1.0], vec![1; 2], 2, 3, 0);
        assert_ne!(c.owner(0), c.owner(1));
        let victim = c.owner(0);
        let mut alive = vec![true, true];
        alive[victim] = false;
        for _ in 0..2 {
            assert_eq!(c.heartbeat(&alive, &[1.0, 1.0]).unwrap(), (vec![], vec![]));
        }
        let (dead, moved) = c.heartbeat(&alive, &[1.0, 1.0]).unwrap();
        assert_eq!(dead, vec![victim]);
        assert_eq!(moved, vec![0]);
        assert_eq!(c.owner(0), 1 - victim);
        assert_eq!(c.owner(1), 1 - victim);
        assert_eq!(c.seq(), 2);
        alive[1 - victim] = false;
        for _ in 0..2 {
            c.heartbeat(&alive, &[1.0, 1.0]).unwrap();
        }
        assert_eq!(c.heartbeat(&alive, &[1.0, 1.0]), Err(OrchestratorError::NoLiveAggregator));
    }

    #[test]
    fn coordinator_restart_pauses_assignments() {
        let tasks = vec![runtime(0, 10, 1)];
        let mut c = Coordinator::new(&[1.0], vec![1_000], 1, 3, 0);
        c.assign_client(0, 1, &ClientCapabilities::All, &tasks).unwrap();
        c.fail(10, 30);
        assert_eq!(c.pending_count(0), 0);
        assert_eq!(c.assign_client(39, 2, &ClientCapabilities::All, &tasks), Err(Rejection::CoordinatorRecovering));
        assert_eq!(c.assign_client(40, 2, &ClientCapabilities::All, &tasks), Ok(0));
    }

    #[test]
    fn stale_selector_causes_retry_through_refreshed_map() {
        let tasks = vec![runtime(0, 10, 1), runtime(1, 10, 1)];
        let mut cluster = Cluster::new(ClusterConfig { selectors: 2, ..Default::default() }, tasks, vec![1.0, 1.0], 3);
        let mut log: Vec<EventRecord> = Vec::new();
        let victim = cluster.coordinator.owner(0);
        cluster.fail_aggregator(0, victim, &mut log);
        // selectors are not refreshed, so both still point at the dead aggregator
        for _ in 0..3 {
            cluster.coordinator.heartbeat(&cluster.alive, &[1.0, 1.0]).unwrap();
        }
        assert_ne!(cluster.coordinator.owner(0), victim);
        assert!(cluster.selectors.iter().all(|s| s.route(0) == victim));
        let only0 = ClientCapabilities::Only([0].into_iter().collect());
        let out = cluster.check_in(1, 7, &only0, &mut log).unwrap();
        assert!(matches!(out, CheckIn::Assigned { task: 0, .. }), "{out:?}");
        assert!(log.iter().any(|r| r.transition == Transition::RouteRetry));
        assert_eq!(cluster.tasks[0].active(), 1);
        assert_eq!(cluster.coordinator.pending_count(0), 0);
    }
}
