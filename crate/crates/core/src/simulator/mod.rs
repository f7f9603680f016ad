//! Deterministic discrete-event simulation of a device population talking
//! to the orchestrator.

mod engine;
mod execution;
mod population;
mod queue;
mod workload;

pub use engine::{run_simulation, run_with_world, SimOutcome, StopReason, World};
pub use execution::{client_execution_model, ExecutionPlan};
pub use population::{execution_spread, generate_population, pick_client, quantile_sorted, ClientProfile, PopulationSpec};
pub use queue::EventQueue;
pub use workload::{DataSpec, Workload};

use thiserror::Error;

use crate::model::ModelError;
use crate::orchestrator::OrchestratorError;
use crate::scenario::ScenarioError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid population: {0}")]
    InvalidPopulation(String),
    #[error("invalid data spec: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("event budget of {budget} exhausted at t={t_s:.3}s before the stop rule was met")]
    BudgetExhausted { budget: u64, t_s: f64, partial: Box<SimOutcome> },
}
