//! Virtual time in integer microseconds.

/// A point or span of virtual time, in microseconds.
pub type Micros = u64;

pub const MICROS_PER_SEC: u64 = 1_000_000;

/// Converts non-negative seconds to microseconds, rounding to nearest.
pub fn from_secs(seconds: f64) -> Micros {
    debug_assert!(seconds >= 0.0, "negative duration {seconds}");
    (seconds.max(0.0) * MICROS_PER_SEC as f64).round() as Micros
}

pub fn to_secs(t: Micros) -> f64 {
    t as f64 / MICROS_PER_SEC as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions() {
        assert_eq!(from_secs(1.5), 1_500_000);
        assert_eq!(from_secs(0.0), 0);
        assert_eq!(from_secs(1e-7), 0);
        assert_eq!(to_secs(2_500_000), 2.5);
    }
}
