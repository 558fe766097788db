//! Manager configuration: a TOML file, then `SOC_MANAGER_*` overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use soc_core::AgentId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManagerConfig {
    pub bind: String,
    pub api_port: u16,
    pub ingest_port: u16,
    pub data_root: PathBuf,
    /// Webhook receiving ticket notices; ticketing is off when unset.
    pub ticket_webhook: Option<String>,
    pub ticket_threshold: u8,
    pub webhook_attempts: u32,
    pub webhook_backoff_ms: u64,
    /// Reputation backend: an `http(s)://` base URL or `mock:<fixture path>`.
    pub reputation: Option<String>,
    pub reputation_key: Option<String>,
    /// Command used to run active-response scripts, split on whitespace.
    pub ar_interpreter: String,
    pub ar_timeout_secs: u64,
    /// Agents known before any enrollment.
    pub agents: Vec<AgentId>,
    /// An agent counts as active if it was heard from this recently.
    pub active_window_secs: u64,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            api_port: 55002,
            ingest_port: 1514,
            data_root: PathBuf::from("/var/ossec"),
            ticket_webhook: None,
            ticket_threshold: 5,
            webhook_attempts: 4,
            webhook_backoff_ms: 200,
            reputation: None,
            reputation_key: None,
            ar_interpreter: "python3".into(),
            ar_timeout_secs: 30,
            agents: Vec::new(),
            active_window_secs: 30,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("bad config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("bad value for {var}: {reason}")]
    Env { var: String, reason: String },
}

impl ManagerConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| ConfigError::Read { path: path.into(), source })?;
                toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), reason: e.to_string() })?
            }
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(var: &str, raw: String) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            raw.parse().map_err(|e: T::Err| ConfigError::Env { var: var.into(), reason: e.to_string() })
        }
        let var = |name: &str| (format!("SOC_MANAGER_{name}"), get(&format!("SOC_MANAGER_{name}")));
        if let (_, Some(v)) = var("BIND") {
            self.bind = v;
        }
        if let (k, Some(v)) = var("API_PORT") {
            self.api_port = parse(&k, v)?;
        }
        if let (k, Some(v)) = var("INGEST_PORT") {
            self.ingest_port = parse(&k, v)?;
        }
        if let (_, Some(v)) = var("DATA_ROOT") {
            self.data_root = v.into();
        }
        if let (_, Some(v)) = var("TICKET_WEBHOOK") {
            self.ticket_webhook = Some(v).filter(|v| !v.is_empty());
        }
        if let (k, Some(v)) = var("TICKET_THRESHOLD") {
            self.ticket_threshold = parse(&k, v)?;
        }
        if let (_, Some(v)) = var("REPUTATION") {
            self.reputation = Some(v).filter(|v| !v.is_empty());
        }
        if let (_, Some(v)) = var("REPUTATION_KEY") {
            self.reputation_key = Some(v).filter(|v| !v.is_empty());
        }
        if let (_, Some(v)) = var("AR_INTERPRETER") {
            self.ar_interpreter = v;
        }
        if let (k, Some(v)) = var("AR_TIMEOUT") {
            self.ar_timeout_secs = parse(&k, v)?;
        }
        Ok(())
    }

    pub fn ar_timeout(&self) -> Duration {
        Duration::from_secs(self.ar_timeout_secs)
    }

    pub fn interpreter(&self) -> Vec<String> {
        self.ar_interpreter.split_whitespace().map(str::to_owned).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn defaults_and_overrides() {
        let mut c: ManagerConfig = toml::from_str("data_root = \"/tmp/x\"\nticket_threshold = 7\n").unwrap();
        assert_eq!(c.api_port, 55002);
        assert_eq!(c.ingest_port, 1514);
        assert_eq!(c.ticket_threshold, 7);
        let env: HashMap<&str, &str> = [("SOC_MANAGER_API_PORT", "6000"), ("SOC_MANAGER_TICKET_WEBHOOK", "http://h/x")].into();
        c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.api_port, 6000);
        assert_eq!(c.ticket_webhook.as_deref(), Some("http://h/x"));
        let back: ManagerConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert!(c.apply_env(|k| (k == "SOC_MANAGER_AR_TIMEOUT").then(|| "x".into())).is_err());
    }
}
