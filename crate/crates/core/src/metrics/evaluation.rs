use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::simulator::{quantile_sorted, ClientProfile, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileLoss {
    /// Clients whose example count is at or above this percentile.
    pub percentile: f64,
    pub min_examples: u64,
    pub clients: usize,
    pub loss: f64,
}

/// Held-out loss of `params` on clients at or above each data-volume
/// percentile. Each evaluated client contributes `examples_per_client`
/// fresh examples from its own distribution; buckets larger than
/// `max_clients` are thinned to an evenly spaced subset.
pub fn percentile_eval(
    params: &[f64],
    workload: &Workload,
    population: &[ClientProfile],
    cuts: &[f64],
    examples_per_client: usize,
    max_clients: usize,
) -> Result<Vec<PercentileLoss>, MetricsError> {
    let mut counts: Vec<f64> = population.iter().map(|c| c.num_examples as f64).collect();
    counts.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(cuts.len());
    for &cut in cuts {
        if !(0.0..=100.0).contains(&cut) {
            return Err(MetricsError::BadPercentile(cut));
        }
        let threshold = if counts.is_empty() { 0.0 } else { quantile_sorted(&counts, cut / 100.0) };
        let bucket: Vec<&ClientProfile> = population.iter().filter(|c| c.num_examples as f64 >= threshold).collect();
        if bucket.is_empty() || examples_per_client == 0 {
            return Err(MetricsError::EmptyBucket(cut));
        }
        let stride = bucket.len().div_ceil(max_clients.max(1));
        let chosen: Vec<&ClientProfile> = bucket.iter().step_by(stride).copied().collect();
        let total: f64 = chosen
            .iter()
            .map(|c| workload.task.loss(params, &workload.client_heldout(c, examples_per_client)))
            .sum();
        out.push(PercentileLoss {
            percentile: cut,
            min_examples: threshold as u64,
            clients: chosen.len(),
            loss: total / chosen.len() as f64,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit { slope, intercept, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_population, DataSpec, PopulationSpec};

    #[test]
    fn fit_recovers_a_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12 && (f.intercept + 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let noisy = linear_fit(&xs, &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((noisy.r_squared - 0.64).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
        assert!(linear_fit(&[2.0, 2.0], &[1.0, 3.0]).is_none());
    }

    fn world(volume_shift: f64, sigma: f64) -> (Workload, Vec<ClientProfile>) {
        let pspec = PopulationSpec { population_size: 3000, examples_lognormal_sigma: sigma, ..Default::default() };
        let pop = generate_population(&pspec).unwrap();
        let spec = DataSpec { dim: 8, volume_shift, data_shift: 0.0, eval_examples: 200, ..Default::default() };
        (Workload::new(&spec, &pspec, &pop).unwrap(), pop)
    }

    #[test]
    fn homogeneous_population_scores_evenly() {
        let (w, pop) = world(0.0, 0.0);
        let rows = percentile_eval(&w.task.true_params, &w, &pop, &[0.0, 75.0, 99.0], 50, 200).unwrap();
        let base = rows[0].loss;
        for r in &rows {
            assert!((r.loss - base).abs() < 0.1 * base, "{rows:?}");
        }
    }

    #[test]
    fn shifted_rich_clients_score_worse_under_the_pooled_optimum() {
        let (w, pop) = world(1.5, 0.8);
        let rows = percentile_eval(&w.task.true_params, &w, &pop, &[0.0, 99.0], 50, 500).unwrap();
        assert!(rows[1].loss > 2.0 * rows[0].loss, "{rows:?}");
        assert!(rows[1].clients <= 31);
    }

    #[test]
    fn bad_cuts_are_rejected() {
        let (w, pop) = world(0.0, 0.8);
        assert!(matches!(percentile_eval(&w.task.true_params, &w, &pop, &[101.0], 5, 5), Err(MetricsError::BadPercentile(_))));
        assert!(matches!(percentile_eval(&w.task.true_params, &w, &[], &[50.0], 5, 5), Err(MetricsError::EmptyBucket(_))));
    }
}
