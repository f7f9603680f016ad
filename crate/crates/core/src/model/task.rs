use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng;

/// Loss family of a synthetic task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    LinearRegression,
    LogisticClassification,
}

impl TaskKind {
    /// Per-example loss at logit/prediction `z` with target `y`.
    pub fn loss(self, z: f64, y: f64) -> f64 {
        match self {
            TaskKind::LinearRegression => 0.5 * (z - y) * (z - y),
            TaskKind::LogisticClassification => softplus(z) - y * z,
        }
    }

    /// Derivative of [`TaskKind::loss`] with respect to `z`.
    pub fn dloss(self, z: f64, y: f64) -> f64 {
        match self {
            TaskKind::LinearRegression => z - y,
            TaskKind::LogisticClassification => sigmoid(z) - y,
        }
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Row-major design matrix with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Self {
        assert_eq!(inputs.len(), dim * targets.len(), "inputs must be len x dim");
        Self { dim, inputs, targets }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> (&[f64], f64) {
        (&self.inputs[i * self.dim..(i + 1) * self.dim], self.targets[i])
    }
}

/// A convex stand-in learning problem with a known generating parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub true_params: Vec<f64>,
    pub noise_scale: f64,
    pub input_dim: usize,
}

impl SyntheticTask {
    /// Draws the generating parameters from a standard normal using `seed`.
    pub fn generate(kind: TaskKind, input_dim: usize, noise_scale: f64, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "true-params", 0);
        let true_params = (0..input_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self { kind, true_params, noise_scale, input_dim }
    }

    /// Samples `n` examples whose generating parameters are `params`
    /// (the task's own parameters, or a client-shifted copy).
    pub fn sample<R: Rng + ?Sized>(&self, params: &[f64], n: usize, rng: &mut R) -> Dataset {
        let d = self.input_dim;
        let mut inputs = Vec::with_capacity(n * d);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let start = inputs.len();
            inputs.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let z = dot(&inputs[start..], params);
            let y = match self.kind {
                TaskKind::LinearRegression => {
                    z + self.noise_scale * rng.sample::<f64, _>(StandardNormal)
                }
                TaskKind::LogisticClassification => {
                    let p = sigmoid(z + self.noise_scale * rng.sample::<f64, _>(StandardNormal));
                    if rng.gen::<f64>() < p {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            targets.push(y);
        }
        Dataset::new(d, inputs, targets)
    }

    /// Mean per-example loss of `params` on `data`.
    pub fn loss(&self, params: &[f64], data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let total: f64 = (0..data.len())
            .map(|i| {
                let (x, y) = data.row(i);
                self.kind.loss(dot(x, params), y)
            })
            .sum();
        total / data.len() as f64
    }

    /// Mean gradient over the rows in `rows`, written into `grad`.
    pub fn gradient(&self, params: &[f64], data: &Dataset, rows: &[usize], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &i in rows {
            let (x, y) = data.row(i);
            let dz = self.kind.dloss(dot(x, params), y);
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += dz * xi;
            }
        }
        let scale = 1.0 / rows.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn losses_are_nonnegative() {
        for z in [-50.0, -1.0, 0.0, 2.0, 40.0] {
            for y in [0.0, 1.0] {
                assert!(TaskKind::LogisticClassification.loss(z, y) >= 0.0);
                assert!(TaskKind::LinearRegression.loss(z, y) >= 0.0);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for kind in [TaskKind::LinearRegression, TaskKind::LogisticClassification] {
            let task = SyntheticTask::generate(kind, 4, 0.2, 3);
            let data = task.sample(&task.true_params, 6, &mut rng::stream(1, "t", 0));
            let params = vec![0.3, -0.2, 0.1, 0.5];
            let rows: Vec<usize> = (0..6).collect();
            let mut grad = vec![0.0; 4];
            task.gradient(&params, &data, &rows, &mut grad);
            for j in 0..4 {
                let h = 1e-6;
                let mut up = params.clone();
                let mut down = params.clone();
                up[j] += h;
                down[j] -= h;
                let fd = (task.loss(&up, &data) - task.loss(&down, &data)) / (2.0 * h);
                assert!((fd - grad[j]).abs() < 1e-6, "{kind:?} coord {j}: {fd} vs {}", grad[j]);
            }
        }
    }
}
