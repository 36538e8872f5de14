use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ApiError;
use crate::ledger::{AccessPolicy, AccessRule, Action, Effect};
use crate::monitor::MonitorConfig;
use crate::orchestrator::{HeartbeatConfig, NodeKind, NodeSpec};
use crate::transport::{NetworkProfile, KEY_LEN};

/// Only environment variable read by the service: path of the JSON config.
pub const CONFIG_ENV: &str = "CLOUDMRI_CONFIG";

/// Key used when the config names none. Fine for a simulation, never for real data.
pub const DEV_KEY_ID: &str = "dev";
pub const DEV_KEY_HEX: &str = "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub storage_dir: PathBuf,
    /// Profiles selectable per upload, in addition to the built-in ones.
    pub profiles: Vec<NetworkProfile>,
    /// Profile used when an upload names none.
    pub upload_profile: String,
    pub fleet: Vec<NodeSpec>,
    pub heartbeat: HeartbeatConfig,
    pub policy: AccessPolicy,
    pub monitor: MonitorConfig,
    /// key id -> 32-byte key as hex.
    pub keys: BTreeMap<String, String>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            storage_dir: PathBuf::from("cloudmri-data"),
            profiles: vec![NetworkProfile::local_4g(), NetworkProfile::cloud_6g()],
            upload_profile: NetworkProfile::LOCAL_4G.into(),
            fleet: default_fleet(),
            heartbeat: HeartbeatConfig::default(),
            policy: default_policy(),
            monitor: MonitorConfig::default(),
            keys: BTreeMap::from([(DEV_KEY_ID.to_string(), DEV_KEY_HEX.to_string())]),
        }
    }
}

pub fn default_fleet() -> Vec<NodeSpec> {
    vec![
        NodeSpec {
            node_id: "cloud-1".into(),
            kind: NodeKind::Cloud,
            compute_rate_units_per_s: 100.0,
            profile: NetworkProfile::cloud_6g(),
        },
        NodeSpec {
            node_id: "edge-1".into(),
            kind: NodeKind::Edge,
            compute_rate_units_per_s: 1.0,
            profile: NetworkProfile::local_4g(),
        },
    ]
}

/// Operators upload and reconstruct, radiologists view and review.
pub fn default_policy() -> AccessPolicy {
    use Action::*;
    use Effect::Allow;
    AccessPolicy {
        rules: vec![
            AccessRule::new("operator", Upload, "rawdata", Allow),
            AccessRule::new("operator", Recon, "any", Allow),
            AccessRule::new("operator", Access, "image", Allow),
            AccessRule::new("radiologist", Recon, "any", Allow),
            AccessRule::new("radiologist", Access, "any", Allow),
            AccessRule::new("radiologist", Review, "report", Allow),
        ],
        roles: BTreeMap::from([
            ("tech-01".to_string(), "operator".to_string()),
            ("rad-01".to_string(), "radiologist".to_string()),
        ]),
    }
}

impl GatewayConfig {
    pub fn load(path: &Path) -> Result<Self, ApiError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ApiError::bad_request("config", format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| ApiError::bad_request("config", format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config named by `CLOUDMRI_CONFIG`, or the defaults.
    pub fn from_env() -> Result<Self, ApiError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) => Self::load(Path::new(&p)),
            None => Ok(Self::default()),
        }
    }

    pub fn with_storage_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.storage_dir = dir.into();
        self
    }

    pub fn validate(&self) -> Result<(), ApiError> {
        for p in &self.profiles {
            p.validate().map_err(|e| ApiError::bad_request("config", e.to_string()))?;
        }
        self.profile(&self.upload_profile)?;
        for id in self.keys.keys() {
            self.key(id)?;
        }
        Ok(())
    }

    pub fn profile(&self, name: &str) -> Result<NetworkProfile, ApiError> {
        self.profiles
            .iter()
            .find(|p| p.name == name)
            .cloned()
            .or_else(|| NetworkProfile::builtin(name))
            .ok_or_else(|| ApiError::bad_request("unknown_profile", format!("no network profile named {name:?}")))
    }

    pub fn key(&self, key_id: &str) -> Result<Vec<u8>, ApiError> {
        let hex_key = self
            .keys
            .get(key_id)
            .ok_or_else(|| ApiError::bad_request("unknown_key", format!("no key with id {key_id:?}")))?;
        let key = hex::decode(hex_key).map_err(|e| ApiError::bad_request("config", format!("key {key_id}: {e}")))?;
        if key.len() != KEY_LEN {
            return Err(ApiError::bad_request(
                "config",
                format!("key {key_id} must be {KEY_LEN} bytes, got {}", key.len()),
            ));
        }
        Ok(key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = GatewayConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<GatewayConfig>(&json).unwrap(), cfg);
        // partial configs fall back to defaults
        let partial: GatewayConfig = serde_json::from_str(r#"{"storage_dir":"/tmp/x"}"#).unwrap();
        assert_eq!(partial.fleet, default_fleet());
    }

    #[test]
    fn bad_key_rejected() {
        let mut cfg = GatewayConfig::default();
        cfg.keys.insert("short".into(), "abcd".into());
        assert!(cfg.validate().is_err());
    }
}
