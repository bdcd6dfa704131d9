//! Deployment configuration, kept in one versioned document.

use std::collections::BTreeMap;
use std::net::IpAddr;

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::blueprint::PlannerConfig;
use crate::ids::PlatformId;
use crate::policy::{InboundNetwork, FULL_MIRROR_MAX_LAG_DAYS};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkClassification {
    pub institutional: Vec<ipnet::IpNet>,
    pub restricted: Vec<ipnet::IpNet>,
}

impl NetworkClassification {
    /// The most trusted class whose ranges contain `addr`.
    pub fn classify(&self, addr: IpAddr) -> InboundNetwork {
        if self.restricted.iter().any(|n| n.contains(&addr)) {
            InboundNetwork::Restricted
        } else if self.institutional.iter().any(|n| n.contains(&addr)) {
            InboundNetwork::Institutional
        } else {
            InboundNetwork::Internet
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HavenConfig {
    pub schema_version: u32,
    pub networks: NetworkClassification,
    pub ingress_token_lifetime_hours: i64,
    pub reverification_period_hours: i64,
    pub mirror_max_lag_days: u32,
    pub scratch_retention_days: u32,
    pub platforms: Vec<PlatformId>,
    pub default_platform: PlatformId,
    pub whitelist_ref: String,
    pub tool_manifest_ref: String,
}

impl Default for HavenConfig {
    fn default() -> Self {
        HavenConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            networks: NetworkClassification::default(),
            ingress_token_lifetime_hours: 72,
            reverification_period_hours: 24,
            mirror_max_lag_days: FULL_MIRROR_MAX_LAG_DAYS,
            scratch_retention_days: 7,
            platforms: vec![PlatformId::new("sim")],
            default_platform: PlatformId::new("sim"),
            whitelist_ref: "whitelist/default".into(),
            tool_manifest_ref: "tools/default".into(),
        }
    }
}

impl HavenConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(format!("unsupported config schema_version {}", self.schema_version));
        }
        if self.ingress_token_lifetime_hours <= 0 || self.reverification_period_hours <= 0 {
            return Err("token lifetime and re-verification period must be positive".into());
        }
        if self.mirror_max_lag_days > FULL_MIRROR_MAX_LAG_DAYS {
            return Err(format!("mirror lag may not exceed {FULL_MIRROR_MAX_LAG_DAYS} days"));
        }
        if !self.platforms.contains(&self.default_platform) {
            return Err(format!("default platform {} is not listed", self.default_platform));
        }
        Ok(())
    }

    pub fn token_lifetime(&self) -> Duration {
        Duration::hours(self.ingress_token_lifetime_hours)
    }

    pub fn reverification_period(&self) -> Duration {
        Duration::hours(self.reverification_period_hours)
    }

    pub fn planner(&self) -> PlannerConfig {
        let mut ranges = BTreeMap::new();
        ranges.insert("institutional".to_string(), self.networks.institutional.clone());
        ranges.insert("restricted".to_string(), self.networks.restricted.clone());
        PlannerConfig {
            platforms: self.platforms.iter().cloned().collect(),
            scratch_retention_days: self.scratch_retention_days,
            mirror_max_lag_days: self.mirror_max_lag_days,
            whitelist_ref: self.whitelist_ref.clone(),
            tool_manifest_ref: self.tool_manifest_ref.clone(),
            network_ranges: ranges,
            ..PlannerConfig::default()
        }
    }
}
