use super::ModelError;

/// Down-weighting factor for an update that is `staleness` versions old:
/// `1 / sqrt(1 + s)`.
pub fn staleness_weight(staleness: u64) -> f64 {
    1.0 / (1.0 + staleness as f64).sqrt()
}

/// Number of server versions produced while a client was training.
pub fn compute_staleness(initial_version: u64, current_version: u64) -> Result<u64, ModelError> {
    current_version
        .checked_sub(initial_version)
        .ok_or(ModelError::VersionRegression { initial: initial_version, current: current_version })
}

/// Aggregation weight of one client update: example count times the staleness factor.
pub fn update_weight(num_examples: u64, staleness: u64) -> Result<f64, ModelError> {
    if num_examples == 0 {
        return Err(ModelError::ZeroExamples);
    }
    Ok(num_examples as f64 * staleness_weight(staleness))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weight_examples() {
        assert_eq!(staleness_weight(0), 1.0);
        assert_eq!(staleness_weight(3), 0.5);
        assert_eq!(staleness_weight(99), 0.1);
    }

    #[test]
    fn staleness_examples() {
        assert_eq!(compute_staleness(5, 5), Ok(0));
        assert_eq!(compute_staleness(2, 7), Ok(5));
        assert_eq!(
            compute_staleness(7, 2),
            Err(ModelError::VersionRegression { initial: 7, current: 2 })
        );
    }

    #[test]
    fn update_weight_examples() {
        assert_eq!(update_weight(32, 0), Ok(32.0));
        assert_eq!(update_weight(32, 3), Ok(16.0));
        assert_eq!(update_weight(1, 0), Ok(1.0));
        assert_eq!(update_weight(0, 0), Err(ModelError::ZeroExamples));
    }

    proptest! {
        #[test]
        fn weight_strictly_decreasing_and_bounded(s in 0u64..10_000_000) {
            let w = staleness_weight(s);
            prop_assert!(w > 0.0 && w <= 1.0);
            prop_assert!(staleness_weight(s + 1) < w);
        }
    }
}
