use super::population::ClientProfile;

/// Phase durations of one session, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecutionPlan {
    pub download_s: f64,
    pub train_s: f64,
    pub upload_s: f64,
}

impl ExecutionPlan {
    pub fn total_s(&self) -> f64 {
        self.download_s + self.train_s + self.upload_s
    }

    /// Whether the session would still be running when `timeout_s` expires.
    pub fn exceeds(&self, timeout_s: f64) -> bool {
        self.total_s() > timeout_s
    }
}

/// Transfers take `model_size_bytes / bandwidth`; training takes
/// `speed_factor * num_examples`.
pub fn client_execution_model(profile: &ClientProfile, model_size_bytes: u64) -> ExecutionPlan {
    let transfer = model_size_bytes as f64 / profile.bandwidth_bytes_per_s;
    ExecutionPlan { download_s: transfer, train_s: profile.train_seconds(), upload_s: transfer }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(speed: f64, n: u64) -> ClientProfile {
        ClientProfile { client_id: 0, speed_factor: speed, num_examples: n, dropout_prob: 0.0, bandwidth_bytes_per_s: 1e6 }
    }

    #[test]
    fn examples() {
        let p = client_execution_model(&profile(0.01, 1000), 2_000_000);
        assert!((p.train_s - 10.0).abs() < 1e-12);
        assert_eq!(p.download_s, 2.0);
        assert_eq!(p.upload_s, 2.0);
        assert!(client_execution_model(&profile(1.0, 500), 0).exceeds(240.0));
        let z = client_execution_model(&profile(0.1, 10), 0);
        assert_eq!((z.download_s, z.upload_s), (0.0, 0.0));
        assert!(!z.exceeds(240.0));
    }
}
