//! Service configuration: a TOML file with `DELIB_*` environment overrides.
//! Secrets never live here, only the names of variables holding them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::{GatewayConfig, GatewayMode};
use crate::ids::ClockMode;

use super::auth::TokenSpec;
use super::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EventClock {
    /// Reflections may lead wall time since event start by at most the skew.
    #[default]
    Wall,
    /// Client timestamps are taken as given (replays, simulations).
    Trusted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub bind: String,
    pub clock: ClockMode,
    pub event_clock: EventClock,
    /// Write a snapshot every this many records; 0 disables.
    pub snapshot_every: u64,
    pub fsync: bool,
    pub gateway: GatewayConfig,
    pub tokens: Vec<TokenSpec>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            bind: "127.0.0.1:8080".into(),
            clock: ClockMode::System,
            event_clock: EventClock::Wall,
            snapshot_every: 1000,
            fsync: false,
            gateway: GatewayConfig::default(),
            tokens: Vec::new(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies `DELIB_DATA_DIR`, `DELIB_BIND`, `DELIB_CLOCK`,
    /// `DELIB_EVENT_CLOCK`, `DELIB_GATEWAY_MODE`, `DELIB_GATEWAY_ENDPOINT`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        let parse = |key: &str, v: String| -> Result<String, ServiceError> {
            if v.trim().is_empty() {
                return Err(ServiceError::Config(format!("{key} is empty")));
            }
            Ok(v)
        };
        if let Some(v) = lookup("DELIB_DATA_DIR") {
            self.data_dir = Some(parse("DELIB_DATA_DIR", v)?.into());
        }
        if let Some(v) = lookup("DELIB_BIND") {
            self.bind = parse("DELIB_BIND", v)?;
        }
        if let Some(v) = lookup("DELIB_CLOCK") {
            self.clock = enum_value("DELIB_CLOCK", &v)?;
        }
        if let Some(v) = lookup("DELIB_EVENT_CLOCK") {
            self.event_clock = enum_value("DELIB_EVENT_CLOCK", &v)?;
        }
        if let Some(v) = lookup("DELIB_GATEWAY_MODE") {
            self.gateway.mode = enum_value("DELIB_GATEWAY_MODE", &v)?;
        }
        if let Some(v) = lookup("DELIB_GATEWAY_ENDPOINT") {
            self.gateway.endpoint = parse("DELIB_GATEWAY_ENDPOINT", v)?;
        }
        Ok(())
    }

    /// Mock gateway plus a logical clock and trusted event times: every run
    /// over the same inputs yields the same store.
    pub fn deterministic(mut self) -> Self {
        self.gateway.mode = GatewayMode::Mock;
        self.clock = ClockMode::Logical;
        self.event_clock = EventClock::Trusted;
        self
    }
}

fn enum_value<T: for<'de> Deserialize<'de>>(key: &str, v: &str) -> Result<T, ServiceError> {
    serde_json::from_value(serde_json::Value::String(v.trim().to_lowercase()))
        .map_err(|_| ServiceError::Config(format!("{key}: unsupported value {v:?}")))
}
