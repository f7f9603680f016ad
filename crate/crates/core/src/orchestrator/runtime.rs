use std::collections::BTreeMap;
use std::sync::Arc;

use ed25519_dalek::VerifyingKey;

use super::buffer::{
    Accumulated, AggregationBuffer, BufferKind, Contribution, FinalizedGeneration, Payload, SubmitOutcome, UpdateKey,
};
use super::config::TaskConfig;
use super::events::{EntityKind, EventRecord, EventSink, Transition};
use super::regime::{regime_for, DemandInputs, Regime};
use super::session::{ClientSession, SessionId, SessionState};
use super::OrchestratorError;
use crate::model::{compute_staleness, fedadam_step, update_weight, ClientUpdate, ServerModel, ServerOptimizerState};
use crate::rng;
use crate::secagg::{
    from_fixed_sum, unmask_sum, wire, ClientSubmission, GroupConfig, InitialMessage, TrustedParty,
    TrustedPartyChannel,
};
use crate::time::Micros;

/// What a client hands the aggregator at the end of its session.
#[derive(Debug, Clone)]
pub enum Upload {
    Plain(ClientUpdate),
    /// `weight` is the plaintext weight the client folded into its masked vector.
    Masked { submission: ClientSubmission, client_id: u64, weight: f64 },
}

/// Material a client needs to mask an update for the open generation.
#[derive(Debug, Clone)]
pub struct SecAggOffer {
    pub group: GroupConfig,
    pub initial: InitialMessage,
    pub verifying_key: VerifyingKey,
    pub clip_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UploadOutcome {
    Accepted,
    Discarded,
    Committed { version: u64, aborted: Vec<SessionId> },
}

/// Per-task counters kept online, for comparison with log-derived metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TaskCounters {
    pub trips: u64,
    pub accepted: u64,
    pub discarded: u64,
    pub commits: u64,
    pub aborted: u64,
    pub dead: u64,
    pub buffered_lost: u64,
}

#[derive(Debug)]
struct SecAggRound {
    channel: TrustedPartyChannel,
    group: GroupConfig,
    verifying_key: VerifyingKey,
    initial_messages: Vec<InitialMessage>,
    next_slot: usize,
}

/// Aggregator-side state of one task.
///
/// The model and optimizer state are durable. Sessions, the open buffer
/// generation and the trusted-party round are volatile and vanish when the
/// owning aggregator fails.
#[derive(Debug)]
pub struct TaskRuntime {
    pub index: usize,
    pub config: TaskConfig,
    regime: Box<dyn Regime>,
    model: ServerModel,
    snapshot: Arc<Vec<f64>>,
    optimizer: ServerOptimizerState,
    buffer: AggregationBuffer,
    sessions: BTreeMap<SessionId, ClientSession>,
    secagg: Option<SecAggRound>,
    seed: u64,
    counters: TaskCounters,
}

impl TaskRuntime {
    pub fn new(
        index: usize,
        config: TaskConfig,
        initial_params: Vec<f64>,
        seed: u64,
        shard_count: usize,
    ) -> Result<Self, OrchestratorError> {
        let dim = initial_params.len();
        let regime = regime_for(&config);
        let kind = if config.secagg_enabled { BufferKind::Masked(config.secagg_group(dim)?) } else { BufferKind::Real };
        let buffer = AggregationBuffer::new(regime.aggregation_goal(), dim, kind, shard_count)?;
        let optimizer = ServerOptimizerState::new(dim, config.server_optimizer);
        let mut rt = Self {
            index,
            regime,
            snapshot: Arc::new(initial_params.clone()),
            model: ServerModel::new(initial_params),
            optimizer,
            buffer,
            sessions: BTreeMap::new(),
            secagg: None,
            seed,
            counters: TaskCounters::default(),
            config,
        };
        rt.open_secagg_round();
        Ok(rt)
    }

    pub fn regime(&self) -> &dyn Regime {
        self.regime.as_ref()
    }

    pub fn version(&self) -> u64 {
        self.model.version
    }

    pub fn model(&self) -> &ServerModel {
        &self.model
    }

    pub fn optimizer(&self) -> &ServerOptimizerState {
        &self.optimizer
    }

    /// Shared handle to the current parameters.
    pub fn snapshot(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.snapshot)
    }

    pub fn counters(&self) -> TaskCounters {
        self.counters
    }

    pub fn active(&self) -> usize {
        self.sessions.len()
    }

    pub fn landed(&self) -> usize {
        self.buffer.open_count()
    }

    pub fn session(&self, id: SessionId) -> Option<&ClientSession> {
        self.sessions.get(&id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &ClientSession> {
        self.sessions.values()
    }

    pub fn demand_inputs(&self, pending: usize) -> DemandInputs {
        DemandInputs { active: self.active(), pending, landed: self.landed() }
    }

    pub fn demand(&self, pending: usize) -> i64 {
        self.regime.client_demand(self.demand_inputs(pending))
    }

    /// Opens a session in `Selected` state for a confirmed assignment.
    pub fn admit(
        &mut self,
        now: Micros,
        id: SessionId,
        client_id: u64,
        sink: &mut dyn EventSink,
    ) -> Result<&ClientSession, OrchestratorError> {
        if self.active() >= self.regime.concurrency_bound() {
            return Err(OrchestratorError::ConcurrencyExceeded { task: self.index });
        }
        let session = ClientSession {
            id,
            client_id,
            task: self.index,
            state: SessionState::Selected,
            initial_version: self.model.version,
            started_at: now,
            last_heartbeat: now,
            model: self.snapshot(),
        };
        sink.record(self.session_record(now, &session, Transition::Selected));
        Ok(self.sessions.entry(id).or_insert(session))
    }

    fn session_record(&self, now: Micros, s: &ClientSession, t: Transition) -> EventRecord {
        EventRecord::new(now, EntityKind::Client, t)
            .id(s.client_id)
            .task(self.index)
            .session(s.id.0)
            .version(s.initial_version)
    }

    /// Moves a session forward, or out via `Dead`/`Aborted`.
    pub fn advance(
        &mut self,
        now: Micros,
        id: SessionId,
        to: SessionState,
        sink: &mut dyn EventSink,
    ) -> Result<(), OrchestratorError> {
        let session = self.sessions.get_mut(&id).ok_or(OrchestratorError::UnknownSession(id.0))?;
        session.advance(to, now)?;
        let record = EventRecord::new(now, EntityKind::Client, to.transition())
            .id(session.client_id)
            .task(self.index)
            .session(id.0)
            .version(session.initial_version);
        sink.record(record);
        match to {
            SessionState::Dead => self.counters.dead += 1,
            SessionState::Aborted => self.counters.aborted += 1,
            _ => {}
        }
        if to.is_terminal() {
            self.sessions.remove(&id);
        }
        Ok(())
    }

    /// Aggregator loss: every session dies and the open generation is dropped.
    pub fn fail_volatile_state(&mut self, now: Micros, sink: &mut dyn EventSink) {
        let ids: Vec<SessionId> = self.sessions.keys().copied().collect();
        for id in ids {
            self.advance(now, id, SessionState::Dead, sink).expect("live session can die");
        }
        let lost = self.buffer.discard_open();
        self.counters.buffered_lost += lost as u64;
        if lost > 0 {
            sink.record(
                EventRecord::new(now, EntityKind::Server, Transition::BufferDiscarded)
                    .task(self.index)
                    .version(self.model.version)
                    .value(lost as f64),
            );
        }
        self.open_secagg_round();
    }

    fn open_secagg_round(&mut self) {
        if !self.config.secagg_enabled {
            return;
        }
        let group = self.config.secagg_group(self.model.params.len()).expect("validated with the task");
        let generation = self.buffer.open_generation();
        let slots = 2 * self.regime.aggregation_goal() as u32;
        let tsa_seed = rng::derive_seed(self.seed, "trusted-party", generation);
        let party = TrustedParty::new(group, slots, tsa_seed);
        let verifying_key = party.verifying_key();
        let channel = TrustedPartyChannel::new(party);
        let initial_messages = channel
            .initial_messages()
            .iter()
            .map(|b| wire::decode_initial_message(b).expect("self-encoded"))
            .collect();
        self.secagg = Some(SecAggRound { channel, group, verifying_key, initial_messages, next_slot: 0 });
    }

    /// Reserves a key slot of the open generation's trusted party.
    pub fn secagg_offer(&mut self) -> Option<SecAggOffer> {
        let clip_bound = self.config.secagg_settings().clip_bound;
        let round = self.secagg.as_mut()?;
        let initial = round.initial_messages.get(round.next_slot)?.clone();
        round.next_slot += 1;
        Some(SecAggOffer { group: round.group, initial, verifying_key: round.verifying_key, clip_bound })
    }

    /// Turns away an upload that could not be masked for the open generation.
    pub fn reject_upload(
        &mut self,
        now: Micros,
        id: SessionId,
        sink: &mut dyn EventSink,
    ) -> Result<UploadOutcome, OrchestratorError> {
        let session = self.sessions.get(&id).ok_or(OrchestratorError::UnknownSession(id.0))?;
        let (client_id, initial_version) = (session.client_id, session.initial_version);
        self.discard(now, id, client_id, initial_version, Transition::SecaggRejected, sink)
    }

    /// Weight the server assigns an update from `initial_version` arriving now.
    pub fn weight_for(&self, num_examples: u64, initial_version: u64) -> Result<f64, OrchestratorError> {
        let staleness = compute_staleness(initial_version, self.model.version)?;
        Ok(update_weight(num_examples, staleness)?)
    }

    /// Handles a finished upload: counts the trip, filters by regime, buffers,
    /// and runs the server step and stale aborts when the goal is reached.
    pub fn receive_upload(
        &mut self,
        now: Micros,
        id: SessionId,
        upload: Upload,
        sink: &mut dyn EventSink,
    ) -> Result<UploadOutcome, OrchestratorError> {
        let session = self.sessions.get(&id).ok_or(OrchestratorError::UnknownSession(id.0))?;
        if session.state != SessionState::Uploading {
            return Err(OrchestratorError::IllegalTransition {
                session: id.0,
                from: session.state,
                to: SessionState::Done,
            });
        }
        let (client_id, initial_version) = (session.client_id, session.initial_version);
        let num_examples = match &upload {
            Upload::Plain(u) => u.num_examples,
            Upload::Masked { submission, .. } => submission.masked.num_examples,
        };
        self.counters.trips += 1;
        sink.record(
            EventRecord::new(now, EntityKind::Server, Transition::UploadReceived)
                .id(client_id)
                .task(self.index)
                .session(id.0)
                .version(initial_version),
        );

        if !self.regime.accepts(initial_version, self.model.version) {
            return self.discard(now, id, client_id, initial_version, Transition::UpdateDiscarded, sink);
        }

        let (payload, weight) = match upload {
            Upload::Plain(update) => {
                let weight = self.weight_for(update.num_examples, update.initial_version)?;
                (Payload::Real(update.delta.iter().map(|d| d * weight).collect()), weight)
            }
            Upload::Masked { submission, weight, .. } => {
                let round = self.secagg.as_ref().ok_or(OrchestratorError::SecAggDisabled)?;
                let request = wire::encode_process_request(&submission.completing, &submission.envelope);
                if round.channel.submit(&request).is_err() {
                    return self.discard(now, id, client_id, initial_version, Transition::SecaggRejected, sink);
                }
                (Payload::Masked(submission.masked.masked_vector), weight)
            }
        };

        let outcome = self.buffer.submit(Contribution {
            key: UpdateKey { client_id, nonce: id.0 },
            worker: client_id,
            weight,
            payload,
        })?;
        let finalized = match outcome {
            SubmitOutcome::Duplicate => {
                return self.discard(now, id, client_id, initial_version, Transition::UpdateDiscarded, sink)
            }
            SubmitOutcome::Accepted { .. } => None,
            SubmitOutcome::Finalized(f) => Some(f),
        };
        self.counters.accepted += 1;
        sink.record(
            EventRecord::new(now, EntityKind::Server, Transition::UpdateAccepted)
                .id(client_id)
                .task(self.index)
                .session(id.0)
                .version(initial_version)
                .value(num_examples as f64),
        );
        self.advance(now, id, SessionState::Done, sink)?;

        match finalized {
            None => Ok(UploadOutcome::Accepted),
            Some(f) => {
                let aborted = self.commit(now, f, sink)?;
                Ok(UploadOutcome::Committed { version: self.model.version, aborted })
            }
        }
    }

    fn discard(
        &mut self,
        now: Micros,
        id: SessionId,
        client_id: u64,
        initial_version: u64,
        why: Transition,
        sink: &mut dyn EventSink,
    ) -> Result<UploadOutcome, OrchestratorError> {
        self.counters.discarded += 1;
        sink.record(
            EventRecord::new(now, EntityKind::Server, why)
                .id(client_id)
                .task(self.index)
                .session(id.0)
                .version(initial_version),
        );
        self.advance(now, id, SessionState::Done, sink)?;
        Ok(UploadOutcome::Discarded)
    }

    fn commit(
        &mut self,
        now: Micros,
        finalized: FinalizedGeneration,
        sink: &mut dyn EventSink,
    ) -> Result<Vec<SessionId>, OrchestratorError> {
        let delta = match &finalized.sum {
            Accumulated::Real(sum) => sum.iter().map(|s| s / finalized.total_weight).collect::<Vec<_>>(),
            Accumulated::Masked(sum) => {
                let round = self.secagg.as_ref().ok_or(OrchestratorError::SecAggDisabled)?;
                let released = round
                    .channel
                    .request_release()
                    .map_err(|e| OrchestratorError::SecAgg(e.to_string()))?;
                let unmask = wire::decode_unmask_vector(&released).map_err(|e| OrchestratorError::SecAgg(e.to_string()))?;
                let plain = unmask_sum(sum, &unmask, &round.group).map_err(|e| OrchestratorError::SecAgg(e.to_string()))?;
                plain.iter().map(|g| from_fixed_sum(*g, &round.group) / finalized.total_weight).collect()
            }
        };
        let (optimizer, model) = fedadam_step(&self.optimizer, &self.model, &delta)?;
        self.optimizer = optimizer;
        self.model = model;
        self.snapshot = Arc::new(self.model.params.clone());
        self.counters.commits += 1;
        sink.record(
            EventRecord::new(now, EntityKind::Server, Transition::VersionCommitted)
                .task(self.index)
                .version(self.model.version)
                .value(finalized.count as f64),
        );
        self.open_secagg_round();
        Ok(self.abort_stale(now, sink))
    }

    /// Aborts every live session the regime now considers stale.
    pub fn abort_stale(&mut self, now: Micros, sink: &mut dyn EventSink) -> Vec<SessionId> {
        let current = self.model.version;
        let stale: Vec<SessionId> = self
            .sessions
            .values()
            .filter(|s| self.regime.is_stale(s.state, s.initial_version, current))
            .map(|s| s.id)
            .collect();
        for id in &stale {
            self.advance(now, *id, SessionState::Aborted, sink).expect("live session can abort");
        }
        stale
    }
}
