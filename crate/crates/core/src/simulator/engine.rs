use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::execution::{client_execution_model, ExecutionPlan};
use super::population::{generate_population, ClientProfile};
use super::queue::EventQueue;
use super::workload::Workload;
use super::SimError;
use crate::model::{local_train, ClientUpdate, ServerModel};
use crate::orchestrator::{
    CheckIn, ClientCapabilities, Cluster, EntityKind, EventRecord, SessionId, SessionState, TaskCounters,
    TaskRuntime, Transition, Upload, UploadOutcome,
};
use crate::rng;
use crate::scenario::{FailureTarget, Scenario, StopRule};
use crate::secagg::mask_client_update;
use crate::time::{from_secs, to_secs, Micros};

/// Population and data shared by every run of a scenario family.
#[derive(Debug, Clone)]
pub struct World {
    pub population: Vec<ClientProfile>,
    pub workload: Workload,
}

impl World {
    pub fn build(scenario: &Scenario) -> Result<Self, SimError> {
        let pspec = scenario.population_spec();
        let population = generate_population(&pspec)?;
        let workload = Workload::new(&scenario.data_spec(), &pspec, &population)?;
        Ok(Self { population, workload })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The scenario's stop rule was met.
    Rule,
    /// Nothing left to do: no events and no demand.
    Idle,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub scenario: String,
    pub task_ids: Vec<String>,
    pub log: Vec<EventRecord>,
    pub end_time: Micros,
    pub events_processed: u64,
    pub stop_reason: StopReason,
    pub final_models: Vec<ServerModel>,
    pub counters: Vec<TaskCounters>,
    pub final_loss: Vec<f64>,
    pub target_loss: Option<f64>,
    /// First evaluation at or below the target, per task.
    pub time_to_target: Vec<Option<Micros>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    DownloadDone,
    TrainDone,
    ReportDone,
    UploadDone,
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Arrival,
    Phase { task: usize, session: SessionId, phase: Phase },
    /// Dropout or timeout.
    Kill { task: usize, session: SessionId },
    Heartbeat,
    Failure(usize),
    CoordinatorRecover,
}

struct SimSession {
    client: usize,
    plan: ExecutionPlan,
    update: Option<ClientUpdate>,
}

struct Engine<'a> {
    scenario: &'a Scenario,
    world: &'a World,
    queue: EventQueue<Event>,
    cluster: Cluster,
    log: Vec<EventRecord>,
    busy: Vec<bool>,
    idle: usize,
    sessions: HashMap<SessionId, SimSession>,
    arrival_pending: bool,
    arrivals: ChaCha8Rng,
    interarrival: Exp<f64>,
    stalled: bool,
    latest_loss: Vec<f64>,
    time_to_target: Vec<Option<Micros>>,
    target: Option<f64>,
}

pub fn run_simulation(scenario: &Scenario) -> Result<SimOutcome, SimError> {
    scenario.validate()?;
    let world = World::build(scenario)?;
    run_with_world(scenario, &world)
}

/// Runs `scenario` on a prebuilt world, which must come from a scenario with
/// the same population and data.
pub fn run_with_world(scenario: &Scenario, world: &World) -> Result<SimOutcome, SimError> {
    scenario.validate()?;
    let mut engine = Engine::new(scenario, world)?;
    engine.run()
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, world: &'a World) -> Result<Self, SimError> {
        let dim = world.workload.dim();
        let model_bytes = world.workload.model_size_bytes() as f64;
        let mut tasks = Vec::with_capacity(scenario.tasks.len());
        let mut loads = Vec::with_capacity(scenario.tasks.len());
        for (i, cfg) in scenario.tasks.iter().enumerate() {
            let seed = rng::derive_seed(scenario.seed, "task", i as u64);
            tasks.push(TaskRuntime::new(i, cfg.clone(), vec![0.0; dim], seed, scenario.cluster.aggregation_shards)?);
            loads.push(cfg.concurrency as f64 * model_bytes.max(1.0));
        }
        let cluster = Cluster::new(scenario.cluster, tasks, loads, scenario.derived_seed("cluster"));
        let n = world.population.len();
        let task_count = scenario.tasks.len();
        Ok(Self {
            scenario,
            world,
            queue: EventQueue::new(),
            cluster,
            log: Vec::new(),
            busy: vec![false; n],
            idle: n,
            sessions: HashMap::new(),
            arrival_pending: false,
            arrivals: rng::stream(scenario.seed, "arrivals", 0),
            interarrival: Exp::new(scenario.simulation.arrival_rate_per_s).expect("validated rate"),
            stalled: false,
            latest_loss: vec![f64::INFINITY; task_count],
            time_to_target: vec![None; task_count],
            target: scenario.effective_target(),
        })
    }

    fn run(&mut self) -> Result<SimOutcome, SimError> {
        self.cluster.log_placement(0, &mut self.log);
        for t in 0..self.cluster.tasks.len() {
            self.evaluate(0, t);
        }
        let hb = from_secs(self.scenario.cluster.heartbeat_interval_s);
        if hb > 0 {
            self.queue.schedule(hb, Event::Heartbeat);
        }
        for (i, f) in self.scenario.failures.iter().enumerate() {
            self.queue.schedule(from_secs(f.at_s), Event::Failure(i));
        }
        self.rearm_arrival(0);

        let budget = self.scenario.simulation.event_budget;
        let horizon = match self.scenario.stop {
            StopRule::Time(s) => Some(from_secs(s)),
            _ => None,
        };
        let mut processed = 0u64;
        let (end, reason) = loop {
            if self.rule_met() {
                break (self.queue.now(), StopReason::Rule);
            }
            let Some(next) = self.queue.peek_time() else {
                break (self.queue.now(), StopReason::Idle);
            };
            if let Some(h) = horizon {
                if next > h {
                    break (h, StopReason::Rule);
                }
            }
            if processed >= budget {
                let t = self.queue.now();
                let partial = self.finish(t, processed, StopReason::Rule);
                return Err(SimError::BudgetExhausted { budget, t_s: to_secs(t), partial: Box::new(partial) });
            }
            let (now, event) = self.queue.pop().expect("peeked");
            processed += 1;
            self.handle(now, event)?;
            self.rearm_arrival(now);
        };
        Ok(self.finish(end, processed, reason))
    }

    fn rule_met(&self) -> bool {
        let tasks = &self.cluster.tasks;
        match self.scenario.stop {
            StopRule::TargetLoss(x) => self.latest_loss.iter().all(|l| *l <= x),
            StopRule::Updates(n) => tasks.iter().all(|t| t.counters().accepted >= n),
            StopRule::Versions(n) => tasks.iter().all(|t| t.version() >= n),
            StopRule::Time(_) => false,
        }
    }

    /// Aborts whatever is still in flight so every session ends in the log.
    fn finish(&mut self, end: Micros, processed: u64, reason: StopReason) -> SimOutcome {
        for t in 0..self.cluster.tasks.len() {
            let live: Vec<SessionId> = self.cluster.tasks[t].sessions().map(|s| s.id).collect();
            for id in live {
                self.cluster.advance(end, t, id, SessionState::Aborted, &mut self.log).expect("live session can abort");
            }
        }
        let tasks = &self.cluster.tasks;
        SimOutcome {
            scenario: self.scenario.name.clone(),
            task_ids: tasks.iter().map(|t| t.config.task_id.clone()).collect(),
            log: self.log.clone(),
            end_time: end,
            events_processed: processed,
            stop_reason: reason,
            final_models: tasks.iter().map(|t| t.model().clone()).collect(),
            counters: tasks.iter().map(|t| t.counters()).collect(),
            final_loss: tasks.iter().map(|t| self.world.workload.eval_loss(&t.model().params)).collect(),
            target_loss: self.target,
            time_to_target: self.time_to_target.clone(),
        }
    }

    fn rearm_arrival(&mut self, now: Micros) {
        if self.arrival_pending {
            return;
        }
        if !self.cluster.any_demand(now) {
            return;
        }
        if self.idle == 0 {
            if !self.stalled {
                self.stalled = true;
                for t in 0..self.cluster.tasks.len() {
                    if self.cluster.demand(t) > 0 {
                        let v = self.cluster.tasks[t].version();
                        self.log.push(
                            EventRecord::new(now, EntityKind::Server, Transition::RoundStalled)
                                .task(t)
                                .version(v)
                                .value(self.cluster.demand(t) as f64),
                        );
                    }
                }
            }
            return;
        }
        let gap = from_secs(self.interarrival.sample(&mut self.arrivals)).max(1);
        self.queue.schedule(now + gap, Event::Arrival);
        self.arrival_pending = true;
    }

    fn handle(&mut self, now: Micros, event: Event) -> Result<(), SimError> {
        match event {
            Event::Arrival => self.arrival(now),
            Event::Phase { task, session, phase } => self.phase(now, task, session, phase),
            Event::Kill { task, session } => {
                if self.cluster.tasks[task].session(session).is_some() {
                    self.cluster.advance(now, task, session, SessionState::Dead, &mut self.log)?;
                }
                self.release(session);
                Ok(())
            }
            Event::Heartbeat => {
                self.cluster.heartbeat_tick(now, &mut self.log)?;
                self.queue.schedule_in(from_secs(self.scenario.cluster.heartbeat_interval_s), Event::Heartbeat);
                Ok(())
            }
            Event::Failure(i) => {
                let f = self.scenario.failures[i];
                match f.target {
                    FailureTarget::Aggregator => self.cluster.fail_aggregator(now, f.index, &mut self.log),
                    FailureTarget::Coordinator => {
                        let until = self.cluster.fail_coordinator(now, &mut self.log);
                        self.queue.schedule(until, Event::CoordinatorRecover);
                    }
                }
                Ok(())
            }
            Event::CoordinatorRecover => {
                self.cluster.recover_coordinator(now, &mut self.log);
                Ok(())
            }
        }
    }

    fn arrival(&mut self, now: Micros) -> Result<(), SimError> {
        self.arrival_pending = false;
        if self.idle == 0 {
            return Ok(());
        }
        let n = self.busy.len();
        let client = loop {
            let c = self.arrivals.gen_range(0..n);
            if !self.busy[c] {
                break c;
            }
        };
        let profile = self.world.population[client];
        let (task, session) = match self.cluster.check_in(now, profile.client_id, &ClientCapabilities::All, &mut self.log)? {
            CheckIn::Assigned { task, session } => (task, session),
            CheckIn::Rejected(_) => return Ok(()),
        };
        self.stalled = false;
        self.busy[client] = true;
        self.idle -= 1;
        let plan = client_execution_model(&profile, self.world.workload.model_size_bytes());
        self.sessions.insert(session, SimSession { client, plan, update: None });
        self.cluster.advance(now, task, session, SessionState::Downloading, &mut self.log)?;

        let download_end = now + from_secs(plan.download_s);
        let train_end = download_end + from_secs(plan.train_s);
        let finish = train_end + from_secs(self.scenario.simulation.report_latency_s) + from_secs(plan.upload_s);
        let deadline = now + from_secs(self.scenario.tasks[task].client_timeout_s);
        let mut r = rng::stream(self.scenario.seed, "session", session.0);
        let kill_at = if r.gen_bool(profile.dropout_prob) {
            Some((download_end + from_secs(r.gen::<f64>() * plan.train_s)).min(deadline))
        } else if finish > deadline {
            Some(deadline)
        } else {
            None
        };
        self.queue.schedule(download_end, Event::Phase { task, session, phase: Phase::DownloadDone });
        if let Some(at) = kill_at {
            self.queue.schedule(at, Event::Kill { task, session });
        }
        Ok(())
    }

    fn release(&mut self, session: SessionId) {
        if let Some(s) = self.sessions.remove(&session) {
            self.busy[s.client] = false;
            self.idle += 1;
        }
    }

    fn phase(&mut self, now: Micros, task: usize, session: SessionId, phase: Phase) -> Result<(), SimError> {
        if self.cluster.tasks[task].session(session).is_none() {
            // aborted or killed while this event was in flight
            self.release(session);
            return Ok(());
        }
        let Some(sim) = self.sessions.get_mut(&session) else {
            return Ok(());
        };
        let plan = sim.plan;
        match phase {
            Phase::DownloadDone => {
                self.cluster.advance(now, task, session, SessionState::Training, &mut self.log)?;
                self.queue.schedule(now + from_secs(plan.train_s), Event::Phase { task, session, phase: Phase::TrainDone });
            }
            Phase::TrainDone => {
                let profile = self.world.population[sim.client];
                let rt = &self.cluster.tasks[task];
                let s = rt.session(session).expect("checked above");
                let data = self.world.workload.client_dataset(&profile);
                let update = local_train(
                    &s.model,
                    &self.world.workload.task,
                    &data,
                    rt.config.local_training,
                    profile.client_id,
                    s.initial_version,
                )?;
                sim.update = Some(update);
                self.cluster.advance(now, task, session, SessionState::Reporting, &mut self.log)?;
                let latency = from_secs(self.scenario.simulation.report_latency_s);
                self.queue.schedule(now + latency, Event::Phase { task, session, phase: Phase::ReportDone });
            }
            Phase::ReportDone => {
                self.cluster.advance(now, task, session, SessionState::Uploading, &mut self.log)?;
                self.queue.schedule(now + from_secs(plan.upload_s), Event::Phase { task, session, phase: Phase::UploadDone });
            }
            Phase::UploadDone => {
                let update = sim.update.take().expect("trained before upload");
                self.release(session);
                self.upload(now, task, session, update)?;
            }
        }
        Ok(())
    }

    fn upload(&mut self, now: Micros, task: usize, session: SessionId, update: ClientUpdate) -> Result<(), SimError> {
        let rt = &mut self.cluster.tasks[task];
        let upload = if rt.config.secagg_enabled {
            let weight = rt.weight_for(update.num_examples, update.initial_version)?;
            let Some(offer) = rt.secagg_offer() else {
                rt.reject_upload(now, session, &mut self.log)?;
                return Ok(());
            };
            let values: Vec<f64> =
                update.delta.iter().map(|d| (d * weight).clamp(-offer.clip_bound, offer.clip_bound)).collect();
            let mask_seed = rng::derive_seed(self.scenario.seed, "client-mask", session.0);
            match mask_client_update(
                &offer.group,
                &offer.initial,
                &offer.verifying_key,
                &values,
                update.num_examples,
                update.initial_version,
                session.0,
                mask_seed,
            ) {
                Ok(submission) => Upload::Masked { submission, client_id: update.client_id, weight },
                Err(_) => {
                    rt.reject_upload(now, session, &mut self.log)?;
                    return Ok(());
                }
            }
        } else {
            Upload::Plain(update)
        };
        if let UploadOutcome::Committed { version, .. } = rt.receive_upload(now, session, upload, &mut self.log)? {
            if version % self.scenario.simulation.eval_every == 0 {
                self.evaluate(now, task);
            }
        }
        Ok(())
    }

    fn evaluate(&mut self, now: Micros, task: usize) {
        let model = self.cluster.tasks[task].model();
        let loss = self.world.workload.eval_loss(&model.params);
        self.log.push(
            EventRecord::new(now, EntityKind::Server, Transition::Evaluated).task(task).version(model.version).value(loss),
        );
        self.latest_loss[task] = loss;
        if let Some(target) = self.target {
            if loss <= target && self.time_to_target[task].is_none() {
                self.time_to_target[task] = Some(now);
            }
        }
    }
}
