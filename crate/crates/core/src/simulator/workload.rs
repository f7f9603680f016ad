use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::population::{ClientProfile, PopulationSpec};
use super::SimError;
use crate::model::{Dataset, SyntheticTask, TaskKind};
use crate::rng;

/// The learning problem and how client data departs from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub kind: TaskKind,
    pub dim: usize,
    pub noise_scale: f64,
    /// Expected norm of each client's random parameter offset.
    pub data_shift: f64,
    /// Offset along a fixed direction per standard deviation of a client's
    /// log example count. Makes data-rich (and therefore slow) clients differ
    /// systematically from the rest.
    pub volume_shift: f64,
    /// Size of the fixed held-out set used for server evaluation.
    pub eval_examples: usize,
    pub bytes_per_param: u64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::LinearRegression,
            dim: 1000,
            noise_scale: 0.5,
            data_shift: 0.5,
            volume_shift: 1.0,
            eval_examples: 2000,
            bytes_per_param: 4,
            seed: 0,
        }
    }
}

impl DataSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |f: &str, why: &str| Err(SimError::InvalidData(format!("{f}: {why}")));
        if self.dim == 0 {
            return bad("dim", "must be positive");
        }
        for (f, v) in [("noise_scale", self.noise_scale), ("data_shift", self.data_shift), ("volume_shift", self.volume_shift)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(f, "must be a non-negative number");
            }
        }
        if self.eval_examples == 0 {
            return bad("eval_examples", "must be positive");
        }
        Ok(())
    }
}

/// Task plus the per-client data model, with a fixed held-out set.
#[derive(Debug, Clone)]
pub struct Workload {
    pub spec: DataSpec,
    pub task: SyntheticTask,
    volume_direction: Vec<f64>,
    log_mu: f64,
    log_sigma: f64,
    heldout: Dataset,
}

impl Workload {
    pub fn new(spec: &DataSpec, population_spec: &PopulationSpec, population: &[ClientProfile]) -> Result<Self, SimError> {
        spec.validate()?;
        if population.is_empty() {
            return Err(SimError::InvalidPopulation("population is empty".into()));
        }
        let task = SyntheticTask::generate(spec.kind, spec.dim, spec.noise_scale, spec.seed);
        let mut r = rng::stream(spec.seed, "volume-direction", 0);
        let mut dir: Vec<f64> = (0..spec.dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x /= norm);
        let mut w = Self {
            spec: spec.clone(),
            task,
            volume_direction: dir,
            log_mu: population_spec.examples_lognormal_mu,
            log_sigma: population_spec.examples_lognormal_sigma,
            heldout: Dataset::new(spec.dim, Vec::new(), Vec::new()),
        };
        w.heldout = w.build_heldout(population);
        Ok(w)
    }

    /// Examples drawn from the pooled data distribution: each comes from a
    /// client picked with probability proportional to its example count.
    fn build_heldout(&self, population: &[ClientProfile]) -> Dataset {
        let mut cumulative = Vec::with_capacity(population.len());
        let mut total = 0u64;
        for c in population {
            total += c.num_examples;
            cumulative.push(total);
        }
        let mut pick = rng::stream(self.spec.seed, "heldout-pick", 0);
        let d = self.spec.dim;
        let mut inputs = Vec::with_capacity(self.spec.eval_examples * d);
        let mut targets = Vec::with_capacity(self.spec.eval_examples);
        for k in 0..self.spec.eval_examples {
            let x = pick.gen_range(0..total);
            let idx = cumulative.partition_point(|c| *c <= x);
            let params = self.client_params(&population[idx]);
            let one = self.task.sample(&params, 1, &mut rng::stream(self.spec.seed, "heldout-example", k as u64));
            let (row, y) = one.row(0);
            inputs.extend_from_slice(row);
            targets.push(y);
        }
        Dataset::new(d, inputs, targets)
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn model_size_bytes(&self) -> u64 {
        self.spec.dim as u64 * self.spec.bytes_per_param
    }

    /// Standardized log example count.
    pub fn volume_score(&self, num_examples: u64) -> f64 {
        if self.log_sigma == 0.0 {
            return 0.0;
        }
        ((num_examples as f64).ln() - self.log_mu) / self.log_sigma
    }

    /// Parameters generating this client's data.
    pub fn client_params(&self, profile: &ClientProfile) -> Vec<f64> {
        let mut r = rng::stream(self.spec.seed, "client-shift", profile.client_id);
        let scale = self.spec.data_shift / (self.spec.dim as f64).sqrt();
        let along = self.spec.volume_shift * self.volume_score(profile.num_examples);
        self.task
            .true_params
            .iter()
            .zip(&self.volume_direction)
            .map(|(w, u)| w + scale * r.sample::<f64, _>(StandardNormal) + along * u)
            .collect()
    }

    /// The client's local training set; regenerated identically on every call.
    pub fn client_dataset(&self, profile: &ClientProfile) -> Dataset {
        let params = self.client_params(profile);
        let mut r = rng::stream(self.spec.seed, "client-data", profile.client_id);
        self.task.sample(&params, profile.num_examples as usize, &mut r)
    }

    /// Fresh examples from the client's distribution, disjoint from its training set.
    pub fn client_heldout(&self, profile: &ClientProfile, n: usize) -> Dataset {
        let params = self.client_params(profile);
        let mut r = rng::stream(self.spec.seed, "client-heldout", profile.client_id);
        self.task.sample(&params, n, &mut r)
    }

    pub fn heldout(&self) -> &Dataset {
        &self.heldout
    }

    pub fn eval_loss(&self, params: &[f64]) -> f64 {
        self.task.loss(params, &self.heldout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::population::generate_population;

    fn setup(volume_shift: f64) -> (Workload, Vec<ClientProfile>) {
        let pspec = PopulationSpec { population_size: 2000, ..Default::default() };
        let pop = generate_population(&pspec).unwrap();
        let spec = DataSpec { volume_shift, eval_examples: 500, ..Default::default() };
        (Workload::new(&spec, &pspec, &pop).unwrap(), pop)
    }

    #[test]
    fn client_data_is_reproducible() {
        let (w, pop) = setup(1.0);
        assert_eq!(w.client_dataset(&pop[3]), w.client_dataset(&pop[3]));
        assert_eq!(w.client_dataset(&pop[3]).len() as u64, pop[3].num_examples);
        assert_ne!(w.client_dataset(&pop[3]), w.client_dataset(&pop[4]));
    }

    #[test]
    fn volume_shift_moves_data_rich_clients() {
        let (w, pop) = setup(2.0);
        let (w0, _) = setup(0.0);
        let rich = pop.iter().max_by_key(|c| c.num_examples).unwrap();
        let shifted = w.client_params(rich);
        let base = w0.client_params(rich);
        let dist: f64 = shifted.iter().zip(&base).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((dist - 2.0 * w.volume_score(rich.num_examples)).abs() < 1e-9);
        assert!(w.volume_score(rich.num_examples) > 2.0);
    }

    #[test]
    fn heldout_loss_is_lowest_near_the_pooled_optimum() {
        let (w, _) = setup(0.0);
        let at_truth = w.eval_loss(&w.task.true_params);
        let at_zero = w.eval_loss(&vec![0.0; w.dim()]);
        assert!(at_truth < at_zero);
        assert!(at_truth > 0.0);
    }
}
