use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::rng;

/// Parameters of the simulated device population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    pub population_size: usize,
    /// Log-normal parameters of seconds per training example.
    pub speed_lognormal_mu: f64,
    pub speed_lognormal_sigma: f64,
    /// Log-normal parameters of the local example count.
    pub examples_lognormal_mu: f64,
    pub examples_lognormal_sigma: f64,
    /// Probability that a session drops out while training.
    pub dropout_rate: f64,
    /// Log-normal parameters of link bandwidth in bytes per second.
    pub bandwidth_lognormal_mu: f64,
    pub bandwidth_lognormal_sigma: f64,
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            population_size: 100_000,
            speed_lognormal_mu: 0.25f64.ln(),
            speed_lognormal_sigma: 0.7,
            examples_lognormal_mu: 3.4,
            examples_lognormal_sigma: 0.8,
            dropout_rate: 0.05,
            bandwidth_lognormal_mu: 1.0e6f64.ln(),
            bandwidth_lognormal_sigma: 0.5,
            rng_seed: 0,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |field: &str, why: &str| Err(SimError::InvalidPopulation(format!("{field}: {why}")));
        if self.population_size == 0 {
            return bad("population_size", "must be at least 1");
        }
        for (name, mu, sigma) in [
            ("speed", self.speed_lognormal_mu, self.speed_lognormal_sigma),
            ("examples", self.examples_lognormal_mu, self.examples_lognormal_sigma),
            ("bandwidth", self.bandwidth_lognormal_mu, self.bandwidth_lognormal_sigma),
        ] {
            if !mu.is_finite() {
                return bad(&format!("{name}_lognormal_mu"), "must be finite");
            }
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return bad(&format!("{name}_lognormal_sigma"), "must be a non-negative number");
            }
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate", "must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One simulated device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: u64,
    /// Seconds per training example.
    pub speed_factor: f64,
    pub num_examples: u64,
    pub dropout_prob: f64,
    pub bandwidth_bytes_per_s: f64,
}

impl ClientProfile {
    /// Pure training time, ignoring transfers.
    pub fn train_seconds(&self) -> f64 {
        self.speed_factor * self.num_examples as f64
    }
}

/// Draws every client independently from its own seeded stream, so a
/// client's profile does not depend on the population size.
pub fn generate_population(spec: &PopulationSpec) -> Result<Vec<ClientProfile>, SimError> {
    spec.validate()?;
    let speed = LogNormal::new(spec.speed_lognormal_mu, spec.speed_lognormal_sigma)
        .map_err(|e| SimError::InvalidPopulation(e.to_string()))?;
    let examples = LogNormal::new(spec.examples_lognormal_mu, spec.examples_lognormal_sigma)
        .map_err(|e| SimError::InvalidPopulation(e.to_string()))?;
    let bandwidth = LogNormal::new(spec.bandwidth_lognormal_mu, spec.bandwidth_lognormal_sigma)
        .map_err(|e| SimError::InvalidPopulation(e.to_string()))?;
    Ok((0..spec.population_size as u64)
        .map(|id| {
            let mut r = rng::stream(spec.rng_seed, "client-profile", id);
            ClientProfile {
                client_id: id,
                speed_factor: speed.sample(&mut r),
                num_examples: (examples.sample(&mut r).round() as u64).max(1),
                dropout_prob: spec.dropout_rate,
                bandwidth_bytes_per_s: bandwidth.sample(&mut r),
            }
        })
        .collect())
}

/// Value at quantile `q` of an already sorted slice (nearest rank).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

/// Ratio of the 99th to the 1st percentile of training time.
pub fn execution_spread(population: &[ClientProfile]) -> f64 {
    let mut times: Vec<f64> = population.iter().map(ClientProfile::train_seconds).collect();
    times.sort_by(f64::total_cmp);
    quantile_sorted(&times, 0.99) / quantile_sorted(&times, 0.01)
}

/// Uniform draw of a client index.
pub fn pick_client<R: Rng + ?Sized>(population_size: usize, rng: &mut R) -> usize {
    rng.gen_range(0..population_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_population_spans_two_orders_of_magnitude() {
        let pop = generate_population(&PopulationSpec::default()).unwrap();
        assert_eq!(pop.len(), 100_000);
        let spread = execution_spread(&pop);
        assert!(spread >= 100.0, "p99/p1 = {spread}");
    }

    #[test]
    fn same_seed_same_population() {
        let spec = PopulationSpec { population_size: 1000, rng_seed: 5, ..Default::default() };
        let a = generate_population(&spec).unwrap();
        let b = generate_population(&spec).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        let c = generate_population(&PopulationSpec { rng_seed: 6, ..spec.clone() }).unwrap();
        assert_ne!(a, c);
        // prefix stability: a client's draw does not depend on population size
        let small = generate_population(&PopulationSpec { population_size: 10, ..spec }).unwrap();
        assert_eq!(&a[..10], &small[..]);
    }

    #[test]
    fn duration_correlates_with_volume() {
        let pop = generate_population(&PopulationSpec { population_size: 20_000, ..Default::default() }).unwrap();
        let xs: Vec<f64> = pop.iter().map(|c| (c.num_examples as f64).ln()).collect();
        let ys: Vec<f64> = pop.iter().map(|c| c.train_seconds().ln()).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mx, my) = (mean(&xs), mean(&ys));
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        assert!(cov / (vx * vy).sqrt() > 0.6);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_population(&PopulationSpec { population_size: 0, ..Default::default() }).is_err());
        assert!(generate_population(&PopulationSpec { speed_lognormal_sigma: -1.0, ..Default::default() }).is_err());
        assert!(generate_population(&PopulationSpec { examples_lognormal_mu: f64::NAN, ..Default::default() }).is_err());
        assert!(generate_population(&PopulationSpec { dropout_rate: 1.5, ..Default::default() }).is_err());
    }
}
