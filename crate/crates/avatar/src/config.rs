//! Scenario config files (TOML).
//!
//! ```toml
//! [scenario]
//! seed = 42
//! strictness_values = [0, 5, 10]
//! per_cell = 40
//! hitl_error = 0.025
//!
//! [scenario.policy]
//! auto_threshold = 25.0
//!
//! [live]
//! url = "http://localhost:8000/v1/chat/completions"
//! model = "local-model"
//! api_key_env = "SODA_LIVE_API_KEY"
//! ```
//!
//! Every key is optional; anything missing takes its default. Unknown keys
//! are rejected.

use std::path::Path;

use serde::Deserialize;
use soda_core::sim::ScenarioConfig;

use crate::live::LiveConfig;
use crate::{Exit, Failure};

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub scenario: ScenarioConfig,
    pub live: Option<LiveConfig>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::new(Exit::Config, format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(Exit::Config, format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use soda_core::sim::Experiment;

    #[test]
    fn empty_file_is_all_defaults() {
        let c = FileConfig::parse("").unwrap();
        assert_eq!(c.scenario, ScenarioConfig::default());
        assert!(c.live.is_none());
    }

    #[test]
    fn partial_tables_merge_with_defaults() {
        let c =
            FileConfig::parse("[scenario]\nexperiment = \"rq2\"\nper_cell = 10\n[scenario.policy]\nstrictness = 7\n")
                .unwrap();
        assert_eq!(c.scenario.experiment, Experiment::Rq2);
        assert_eq!(c.scenario.per_cell, 10);
        assert_eq!(c.scenario.policy.strictness, 7);
        assert_eq!(c.scenario.policy.block_threshold, 80.0);
        assert_eq!(c.scenario.seed, 42);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        for bad in [
            "[scenario]\nseeed = 1\n",
            "[other]\n",
            "[scenario]\nper_cell = \"many\"\n",
        ] {
            assert_eq!(FileConfig::parse(bad).unwrap_err().exit, Exit::Config, "{bad}");
        }
    }
}
