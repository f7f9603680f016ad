use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_statistic: f64,
    pub p_value: f64,
    pub sample_sizes: (usize, usize),
}

fn gap(i: usize, n: usize, j: usize, m: usize) -> f64 {
    (i as f64 / n as f64 - j as f64 / m as f64).abs()
}

/// Two-sample Kolmogorov-Smirnov test. D is exact; the p-value comes from
/// the asymptotic Kolmogorov distribution with Stephens' small-sample
/// correction of the argument.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, MetricsError> {
    if a.is_empty() {
        return Err(MetricsError::EmptySample("a"));
    }
    if b.is_empty() {
        return Err(MetricsError::EmptySample("b"));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        // step past every copy of the smaller value in both samples
        let v = if xs[i] <= ys[j] { xs[i] } else { ys[j] };
        while i < n && xs[i] == v {
            i += 1;
        }
        while j < m && ys[j] == v {
            j += 1;
        }
        d = d.max(gap(i, n, j, m));
    }
    let en = (n * m) as f64 / (n + m) as f64;
    let lambda = (en.sqrt() + 0.12 + 0.11 / en.sqrt()) * d;
    Ok(KsResult { d_statistic: d, p_value: kolmogorov_survival(lambda), sample_sizes: (n, m) })
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let p = if x < 1.18 {
        // Jacobi theta form converges quickly for small x
        let pi2 = std::f64::consts::PI.powi(2);
        let s: f64 = (1..=20)
            .map(|k| {
                let odd = (2 * k - 1) as f64;
                (-odd * odd * pi2 / (8.0 * x * x)).exp()
            })
            .sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * x * x).exp()
            })
            .sum();
        2.0 * s
    };
    p.clamp(0.0, 1.0)
}

/// O(n·m) reference: evaluates both empirical CDFs at every sample point.
pub fn brute_force_ks_d(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    a.iter()
        .chain(b)
        .map(|x| {
            let i = a.iter().filter(|v| *v <= x).count();
            let j = b.iter().filter(|v| *v <= x).count();
            gap(i, n, j, m)
        })
        .fold(0.0, f64::max)
}
