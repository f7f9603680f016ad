use super::ModelError;

/// Running weighted sum of client deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSum {
    pub sum: Vec<f64>,
    pub total_weight: f64,
    pub count: u64,
}

impl WeightedSum {
    pub fn zeros(dim: usize) -> Self {
        Self { sum: vec![0.0; dim], total_weight: 0.0, count: 0 }
    }

    pub fn add(&mut self, delta: &[f64], weight: f64) -> Result<(), ModelError> {
        if delta.len() != self.sum.len() {
            return Err(ModelError::LengthMismatch { expected: self.sum.len(), found: delta.len() });
        }
        for (s, d) in self.sum.iter_mut().zip(delta) {
            *s += weight * d;
        }
        self.total_weight += weight;
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &WeightedSum) {
        for (s, o) in self.sum.iter_mut().zip(&other.sum) {
            *s += o;
        }
        self.total_weight += other.total_weight;
        self.count += other.count;
    }

    pub fn finalize(&self) -> Result<Vec<f64>, ModelError> {
        finalize_aggregate(&self.sum, self.total_weight)
    }
}

/// Weighted mean of buffered deltas: `buffer_sum / total_weight`.
pub fn finalize_aggregate(buffer_sum: &[f64], total_weight: f64) -> Result<Vec<f64>, ModelError> {
    if !(total_weight > 0.0) {
        return Err(ModelError::NonPositiveWeight(total_weight));
    }
    Ok(buffer_sum.iter().map(|s| s / total_weight).collect())
}
