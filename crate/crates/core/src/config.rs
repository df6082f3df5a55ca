//! TOML configuration shared by every pipeline stage.
//!
//! ```toml
//! [rewards]
//! gold_exact = 1.0
//! soft_match = "score-passthrough"
//! read_only = 0.0
//! state_change = -0.1
//! message_only = 0.0
//! error = -0.1
//! duplicate = -0.2
//!
//! [registry]
//! read_only = ["get_user_details", "get_reservation_details"]
//! state_changing = ["cancel_reservation", "update_reservation_*"]
//!
//! [policy]
//! p_wrong_arg = 0.3
//! error_mode = "failure_linked"
//!
//! [generation]
//! tasks = 500
//! group_size = 4
//! seed = 7
//!
//! [estimator]
//! kind = "hybrid"
//! gamma = 0.9
//!
//! [irc]
//! delta = 0.05
//! max_iterations = 3
//! ```
//!
//! Every section is optional; missing sections fall back to the defaults of
//! the corresponding type, and missing keys inside `[policy]`,
//! `[generation]`, `[estimator]` and `[irc]` do too. `[rewards]` must list
//! all seven tiers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::advantage::EstimatorConfig;
use crate::error::{Error, Result};
use crate::irc::IrcConfig;
use crate::synthenv::{GenerationSettings, PolicyParams};
use crate::tiers::{RewardTable, ToolRegistry};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<RewardTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<ToolRegistry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub irc: Option<IrcConfig>,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = &self.registry {
            r.validate()?;
        }
        if let Some(p) = &self.policy {
            p.validate()?;
        }
        if let Some(e) = &self.estimator {
            e.validate()?;
        }
        if let Some(i) = &self.irc {
            i.validate()?;
        }
        Ok(())
    }

    /// A document holding only a reward table.
    pub fn rewards_only(table: &RewardTable) -> Self {
        Self {
            rewards: Some(table.clone()),
            ..Self::default()
        }
    }
}
