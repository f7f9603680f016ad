use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, ModelError, SyntheticTask};
use crate::rng;

/// Client-side SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        Self { lr: 0.01, batch_size: 32 }
    }
}

/// A plaintext model delta reported by one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: u64,
    pub initial_version: u64,
    pub delta: Vec<f64>,
    pub num_examples: u64,
}

/// One local epoch of mini-batch SGD starting from `model_params`.
///
/// Rows are visited in an order shuffled by a stream seeded from
/// `(client_id, initial_version)`, so a repeated call is bit-identical.
pub fn local_train(
    model_params: &[f64],
    task: &SyntheticTask,
    data: &Dataset,
    config: LocalTrainConfig,
    client_id: u64,
    initial_version: u64,
) -> Result<ClientUpdate, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if !(config.lr > 0.0) {
        return Err(ModelError::InvalidHyperparameter { name: "lr", value: config.lr });
    }
    if config.batch_size == 0 {
        return Err(ModelError::InvalidHyperparameter { name: "batch_size", value: 0.0 });
    }
    if model_params.len() != data.dim() {
        return Err(ModelError::LengthMismatch { expected: data.dim(), found: model_params.len() });
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = rng::stream(client_id, "local-shuffle", initial_version);
    order.shuffle(&mut shuffle);

    let mut params = model_params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for batch in order.chunks(config.batch_size) {
        task.gradient(&params, data, batch, &mut grad);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= config.lr * g;
        }
    }
    let delta = params.iter().zip(model_params).map(|(t, m)| t - m).collect();
    Ok(ClientUpdate { client_id, initial_version, delta, num_examples: data.len() as u64 })
}
