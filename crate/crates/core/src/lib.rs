//! Buffered asynchronous federated learning.
//!
//! The crate contains the numerical core ([`model`]), an asynchronous
//! secure-aggregation protocol built on additive one-time pads and a
//! threshold-gated trusted party ([`secagg`]), the server-side state machines
//! ([`orchestrator`]), a deterministic discrete-event simulator
//! ([`simulator`]) and the metrics computed from its event log ([`metrics`]).

pub mod acceptance;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod scenario;
pub mod secagg;
pub mod simulator;
pub mod rng;
pub mod time;
