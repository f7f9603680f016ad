use serde::{Deserialize, Serialize};

use super::SecAggError;

/// Public parameters of one aggregation: the group `Z_{2^b}`, vector length,
/// fixed-point scale and release threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub modulus_bits: u32,
    pub vector_length: usize,
    pub scaling_factor: f64,
    pub threshold: usize,
}

impl GroupConfig {
    pub fn new(modulus_bits: u32, vector_length: usize, scaling_factor: f64, threshold: usize) -> Result<Self, SecAggError> {
        let cfg = Self { modulus_bits, vector_length, scaling_factor, threshold };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SecAggError> {
        if !(1..=32).contains(&self.modulus_bits) {
            return Err(SecAggError::InvalidGroup(format!("modulus_bits {} not in 1..=32", self.modulus_bits)));
        }
        if !(self.scaling_factor > 0.0 && self.scaling_factor.is_finite()) {
            return Err(SecAggError::InvalidGroup(format!("scaling_factor {} must be positive", self.scaling_factor)));
        }
        if self.threshold == 0 {
            return Err(SecAggError::InvalidGroup("threshold must be at least 1".into()));
        }
        Ok(())
    }

    /// `n = 2^b` as a u64.
    pub fn modulus(&self) -> u64 {
        1u64 << self.modulus_bits
    }

    /// Bit mask selecting the low `b` bits.
    pub fn element_mask(&self) -> u32 {
        (self.modulus() - 1) as u32
    }

    /// Rejects parameter sets where `K` summands of magnitude `bound` could wrap.
    pub fn check_no_overflow(&self, per_coordinate_bound: f64, summands: usize) -> Result<(), SecAggError> {
        let worst = self.scaling_factor * per_coordinate_bound * summands as f64;
        let half = (self.modulus() / 2) as f64;
        if worst >= half {
            return Err(SecAggError::InvalidGroup(format!(
                "c * bound * K = {worst} reaches floor(n/2) = {half}; sums may wrap"
            )));
        }
        Ok(())
    }

    pub(crate) fn add(&self, a: u32, b: u32) -> u32 {
        a.wrapping_add(b) & self.element_mask()
    }

    pub(crate) fn sub(&self, a: u32, b: u32) -> u32 {
        a.wrapping_sub(b) & self.element_mask()
    }
}

/// Maps a real to `Z_n` via `[c*a]`, folding negatives into the upper half.
pub fn to_fixed(a: f64, group: &GroupConfig) -> Result<u32, SecAggError> {
    let n = group.modulus() as i128;
    let scaled = (group.scaling_factor * a).round();
    let low = -(n / 2);
    let high = (n + 1) / 2;
    if !scaled.is_finite() || scaled < low as f64 || scaled >= high as f64 {
        return Err(SecAggError::Overflow {
            value: a.to_string(),
            scale: group.scaling_factor.to_string(),
            bits: group.modulus_bits,
        });
    }
    let int = scaled as i128;
    Ok(if int >= 0 { int as u32 } else { (n + int) as u32 })
}

/// Decodes a group element (typically a sum) back to a real, assuming no wrap-around.
pub fn from_fixed_sum(g: u32, group: &GroupConfig) -> f64 {
    let n = group.modulus() as i128;
    let g = (g & group.element_mask()) as i128;
    let half = (n + 1) / 2;
    let int = if g < half { g } else { g - n };
    int as f64 / group.scaling_factor
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn group(c: f64) -> GroupConfig {
        GroupConfig::new(32, 4, c, 1).unwrap()
    }

    #[test]
    fn to_fixed_examples() {
        assert_eq!(to_fixed(1.234, &group(100.0)), Ok(123));
        assert_eq!(to_fixed(-0.5, &group(100.0)).unwrap() as u64, (1u64 << 32) - 50);
        assert_eq!(to_fixed(0.0, &group(100.0)), Ok(0));
    }

    #[test]
    fn from_fixed_examples() {
        assert!((from_fixed_sum(123, &group(100.0)) - 1.23).abs() < 1e-12);
        let neg = ((1u64 << 32) - 50) as u32;
        assert!((from_fixed_sum(neg, &group(100.0)) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn range_edges_small_group() {
        // b = 8: integers [-128, 128) are representable
        let g = GroupConfig::new(8, 1, 1.0, 1).unwrap();
        assert_eq!(to_fixed(127.0, &g), Ok(127));
        assert_eq!(to_fixed(-128.0, &g), Ok(128));
        assert!(to_fixed(128.0, &g).is_err());
        assert!(to_fixed(-129.0, &g).is_err());
        assert!(to_fixed(f64::NAN, &g).is_err());
        assert_eq!(from_fixed_sum(128, &g), -128.0);
        assert_eq!(from_fixed_sum(255, &g), -1.0);
    }

    #[test]
    fn overflow_guard() {
        let g = GroupConfig::new(32, 1, 65536.0, 1).unwrap();
        assert!(g.check_no_overflow(100.0, 16).is_ok());
        assert!(g.check_no_overflow(1000.0, 100).is_err());
    }

    #[test]
    fn rejects_bad_groups() {
        assert!(GroupConfig::new(0, 1, 1.0, 1).is_err());
        assert!(GroupConfig::new(33, 1, 1.0, 1).is_err());
        assert!(GroupConfig::new(32, 1, 0.0, 1).is_err());
        assert!(GroupConfig::new(32, 1, 1.0, 0).is_err());
    }

    #[test]
    fn round_trip_bound_on_many_values() {
        let c = 1000.0;
        let g = group(c);
        let mut r = crate::rng::stream(3, "fixed", 0);
        for _ in 0..100_000 {
            let a: f64 = rand::Rng::gen_range(&mut r, -1.0e6..1.0e6);
            let back = from_fixed_sum(to_fixed(a, &g).unwrap(), &g);
            assert!((back - a).abs() <= 0.5 / c + 1e-9, "{a} -> {back}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_within_half_step(a in -2.0e4f64..2.0e4, c in 1.0f64..1.0e5) {
            let g = group(c);
            let back = from_fixed_sum(to_fixed(a, &g).unwrap(), &g);
            prop_assert!((back - a).abs() <= 0.5 / c * (1.0 + 1e-9) + 1e-12);
        }
    }
}
