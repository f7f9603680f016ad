//! Scenario files shipped with the binary, addressable by name.

use std::path::Path;

use asyncfl::scenario::{Scenario, ScenarioError};

pub const BUNDLED: &[(&str, &str)] = &[
    ("async_basic", include_str!("../scenarios/async_basic.toml")),
    ("sync_basic", include_str!("../scenarios/sync_basic.toml")),
    ("convergence_compare_async", include_str!("../scenarios/convergence_compare_async.toml")),
    ("convergence_compare_sync", include_str!("../scenarios/convergence_compare_sync.toml")),
];

/// Loads `arg` as a file if it exists, else as a bundled scenario name.
pub fn resolve(arg: &str) -> Result<Scenario, ScenarioError> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some((_, text)) = BUNDLED.iter().find(|(name, _)| *name == arg) {
            return Scenario::from_toml_str(text);
        }
    }
    Scenario::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use asyncfl::experiments::run_scenario;
    use asyncfl::simulator::StopReason;

    #[test]
    fn bundled_scenarios_validate_and_finish() {
        for (name, text) in BUNDLED {
            let scenario = Scenario::from_toml_str(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(scenario.name, *name);
            let (run, _) = run_scenario(&scenario).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(run.outcome.stop_reason, StopReason::Rule, "{name}");
        }
    }
}
