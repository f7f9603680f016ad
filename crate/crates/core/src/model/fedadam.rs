use serde::{Deserialize, Serialize};

use super::ModelError;

/// Versioned server parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerModel {
    pub version: u64,
    pub params: Vec<f64>,
}

impl ServerModel {
    pub fn new(params: Vec<f64>) -> Self {
        Self { version: 0, params }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedAdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for FedAdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam moments for the server step. `step_count` tracks the model version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerOptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: FedAdamConfig,
}

impl ServerOptimizerState {
    pub fn new(dim: usize, config: FedAdamConfig) -> Self {
        Self { first_moment: vec![0.0; dim], second_moment: vec![0.0; dim], step_count: 0, config }
    }
}

/// One server step: the negated aggregate delta is the pseudo-gradient fed to Adam.
pub fn fedadam_step(
    state: &ServerOptimizerState,
    model: &ServerModel,
    aggregated_delta: &[f64],
) -> Result<(ServerOptimizerState, ServerModel), ModelError> {
    let m = model.params.len();
    if aggregated_delta.len() != m {
        return Err(ModelError::LengthMismatch { expected: m, found: aggregated_delta.len() });
    }
    if state.first_moment.len() != m || state.second_moment.len() != m {
        return Err(ModelError::LengthMismatch { expected: m, found: state.first_moment.len() });
    }
    let FedAdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    let step = state.step_count + 1;
    let bias1 = 1.0 - beta1.powf(step as f64);
    let bias2 = 1.0 - beta2.powf(step as f64);

    let mut next = ServerOptimizerState {
        first_moment: Vec::with_capacity(m),
        second_moment: Vec::with_capacity(m),
        step_count: step,
        config: state.config,
    };
    let mut params = Vec::with_capacity(m);
    for j in 0..m {
        let g = -aggregated_delta[j];
        let first = beta1 * state.first_moment[j] + (1.0 - beta1) * g;
        let second = beta2 * state.second_moment[j] + (1.0 - beta2) * g * g;
        let m_hat = first / bias1;
        let v_hat = second / bias2;
        params.push(model.params[j] - learning_rate * m_hat / (v_hat.sqrt() + epsilon));
        next.first_moment.push(first);
        next.second_moment.push(second);
    }
    Ok((next, ServerModel { version: model.version + 1, params }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{local_train, LocalTrainConfig, SyntheticTask, TaskKind};
    use crate::rng;

    #[test]
    fn zero_delta_leaves_params_and_bumps_version() {
        let state = ServerOptimizerState::new(3, FedAdamConfig::default());
        let model = ServerModel { version: 4, params: vec![1.0, 2.0, 3.0] };
        let (s, next) = fedadam_step(&state, &model, &[0.0; 3]).unwrap();
        assert_eq!(next.params, model.params);
        assert_eq!(next.version, 5);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_matches_scalar_oracle() {
        let config = FedAdamConfig { learning_rate: 0.1, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 };
        let state = ServerOptimizerState::new(4, config);
        let model = ServerModel::new(vec![0.5, -0.5, 0.0, 2.0]);
        let delta = [0.3, -0.02, 1e-3, -4.0];
        let (_, next) = fedadam_step(&state, &model, &delta).unwrap();
        // scalar-by-scalar oracle: bias-corrected first step is lr * d / (|d| + eps)
        for j in 0..4 {
            let d: f64 = delta[j];
            let m = (1.0 - 0.9) * -d / (1.0 - 0.9);
            let v = (1.0 - 0.999) * d * d / (1.0 - 0.999);
            let expected = model.params[j] - 0.1 * m / (v.sqrt() + 1e-8);
            assert!((next.params[j] - expected).abs() < 1e-12);
            let sign_like = model.params[j] + 0.1 * d / (d.abs() + 1e-8);
            assert!((next.params[j] - sign_like).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_and_rejects_mismatch() {
        let state = ServerOptimizerState::new(2, FedAdamConfig::default());
        let model = ServerModel::new(vec![0.0, 1.0]);
        assert_eq!(fedadam_step(&state, &model, &[0.1, 0.2]), fedadam_step(&state, &model, &[0.1, 0.2]));
        assert_eq!(
            fedadam_step(&state, &model, &[0.1]),
            Err(ModelError::LengthMismatch { expected: 2, found: 1 })
        );
    }

    #[test]
    fn second_moment_nonnegative_and_step_tracks_version() {
        let mut state = ServerOptimizerState::new(3, FedAdamConfig::default());
        let mut model = ServerModel::new(vec![0.0; 3]);
        let mut r = rng::stream(5, "moments", 0);
        for _ in 0..50 {
            let d: Vec<f64> = (0..3).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
            (state, model) = fedadam_step(&state, &model, &d).unwrap();
            assert!(state.second_moment.iter().all(|v| *v >= 0.0));
            assert_eq!(state.step_count, model.version);
        }
    }

    #[test]
    fn single_client_full_batch_converges_monotonically() {
        let task = SyntheticTask::generate(TaskKind::LinearRegression, 5, 0.0, 11);
        let data = task.sample(&task.true_params, 64, &mut rng::stream(11, "data", 0));
        let optimum = task.loss(&task.true_params, &data);
        let config = FedAdamConfig { learning_rate: 0.01, beta1: 0.0, beta2: 0.999, epsilon: 1e-8 };
        let mut state = ServerOptimizerState::new(5, config);
        let mut model = ServerModel::new(vec![0.0; 5]);
        let local = LocalTrainConfig { lr: 0.1, batch_size: 64 };
        let mut loss = task.loss(&model.params, &data);
        let mut steps = 0;
        while loss - optimum > 1e-6 {
            assert!(steps < 5000, "did not converge: loss {loss}");
            let update = local_train(&model.params, &task, &data, local, 0, model.version).unwrap();
            (state, model) = fedadam_step(&state, &model, &update.delta).unwrap();
            let next = task.loss(&model.params, &data);
            assert!(next < loss, "step {steps}: {next} >= {loss}");
            loss = next;
            steps += 1;
        }
    }
}
