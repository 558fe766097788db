//! Agent configuration: a TOML file, then `SOC_AGENT_*` overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use soc_core::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailFormat {
    /// Syslog lines pass through untouched; anything else is wrapped.
    #[default]
    Syslog,
    /// Every line is wrapped.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: TailFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub agent_id: AgentId,
    /// Base URL of the manager API, e.g. `http://127.0.0.1:55002`.
    pub manager_api: String,
    /// `host:port` of the manager's log listener.
    pub manager_ingest: String,
    pub ossec_dir: PathBuf,
    pub poll_interval: u64,
    /// Command used to run `script.py`, split on whitespace.
    pub interpreter: String,
    pub tail: Vec<TailSpec>,
    pub fim: Vec<PathBuf>,
    pub fim_interval: u64,
    /// Where `startup` writes the scheduler descriptor.
    pub descriptor_dir: PathBuf,
    pub ship_buffer: usize,
    pub ar_attempts: u32,
    pub ar_backoff_ms: u64,
    /// Names used in shipped Syslog headers; detected when unset.
    pub hostname: Option<String>,
    pub username: Option<String>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            agent_id: AgentId::from_number(1).expect("valid"),
            manager_api: "http://127.0.0.1:55002".into(),
            manager_ingest: "127.0.0.1:1514".into(),
            ossec_dir: PathBuf::from("/var/ossec"),
            poll_interval: 3,
            interpreter: "python3".into(),
            tail: Vec::new(),
            fim: Vec::new(),
            fim_interval: 5,
            descriptor_dir: PathBuf::from("/etc/soc/scheduler"),
            ship_buffer: 10_000,
            ar_attempts: 3,
            ar_backoff_ms: 500,
            hostname: None,
            username: None,
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
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn split_paths(raw: &str) -> Vec<PathBuf> {
    raw.split(':').filter(|p| !p.is_empty()).map(PathBuf::from).collect()
}

impl AgentConfig {
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
        config.validate()?;
        Ok(config)
    }

    /// Overrides from `SOC_AGENT_*` variables. Path lists are `:`-separated;
    /// tailed files are taken as Syslog format.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(var: &str, raw: String) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            raw.parse().map_err(|e: T::Err| ConfigError::Env { var: var.into(), reason: e.to_string() })
        }
        if let Some(v) = get("SOC_AGENT_ID") {
            self.agent_id =
                AgentId::parse(&v).map_err(|e| ConfigError::Env { var: "SOC_AGENT_ID".into(), reason: e.to_string() })?;
        }
        if let Some(v) = get("SOC_AGENT_MANAGER_API") {
            self.manager_api = v;
        }
        if let Some(v) = get("SOC_AGENT_MANAGER_INGEST") {
            self.manager_ingest = v;
        }
        if let Some(v) = get("SOC_AGENT_OSSEC_DIR") {
            self.ossec_dir = v.into();
        }
        if let Some(v) = get("SOC_AGENT_POLL_INTERVAL") {
            self.poll_interval = num("SOC_AGENT_POLL_INTERVAL", v)?;
        }
        if let Some(v) = get("SOC_AGENT_INTERPRETER") {
            self.interpreter = v;
        }
        if let Some(v) = get("SOC_AGENT_TAIL") {
            self.tail = split_paths(&v).into_iter().map(|path| TailSpec { path, format: TailFormat::Syslog }).collect();
        }
        if let Some(v) = get("SOC_AGENT_FIM") {
            self.fim = split_paths(&v);
        }
        if let Some(v) = get("SOC_AGENT_FIM_INTERVAL") {
            self.fim_interval = num("SOC_AGENT_FIM_INTERVAL", v)?;
        }
        if let Some(v) = get("SOC_AGENT_DESCRIPTOR_DIR") {
            self.descriptor_dir = v.into();
        }
        if let Some(v) = get("SOC_AGENT_SHIP_BUFFER") {
            self.ship_buffer = num("SOC_AGENT_SHIP_BUFFER", v)?;
        }
        if let Some(v) = get("SOC_AGENT_AR_ATTEMPTS") {
            self.ar_attempts = num("SOC_AGENT_AR_ATTEMPTS", v)?;
        }
        if let Some(v) = get("SOC_AGENT_HOSTNAME") {
            self.hostname = Some(v);
        }
        if let Some(v) = get("SOC_AGENT_USERNAME") {
            self.username = Some(v);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.poll_interval < 1 {
            return Err(ConfigError::Invalid("poll_interval must be at least 1".into()));
        }
        if self.fim_interval < 1 {
            return Err(ConfigError::Invalid("fim_interval must be at least 1".into()));
        }
        if self.ship_buffer < 1 {
            return Err(ConfigError::Invalid("ship_buffer must be at least 1".into()));
        }
        if self.interpreter.split_whitespace().next().is_none() {
            return Err(ConfigError::Invalid("interpreter is empty".into()));
        }
        Ok(())
    }

    pub fn poll_every(&self) -> Duration {
        Duration::from_secs(self.poll_interval)
    }

    pub fn interpreter(&self) -> Vec<String> {
        self.interpreter.split_whitespace().map(str::to_string).collect()
    }

    pub fn shared_dir(&self) -> PathBuf {
        self.ossec_dir.join("shared").join("plugins")
    }

    pub fn local_flag_file(&self) -> PathBuf {
        self.shared_dir().join(format!("{}.json", self.agent_id))
    }

    pub fn download_dir(&self) -> PathBuf {
        self.ossec_dir.join("plugin_download")
    }

    pub fn plugin_syslog(&self) -> PathBuf {
        self.ossec_dir.join("plugin_syslog.log")
    }

    pub fn ar_log(&self) -> PathBuf {
        self.ossec_dir.join("active_responses.log")
    }

    pub fn ar_dead_letters(&self) -> PathBuf {
        self.ossec_dir.join("ar_dead_letters.jsonl")
    }

    pub fn hostname(&self) -> String {
        let raw = self.hostname.clone().or_else(|| whoami::hostname().ok()).unwrap_or_else(|| "localhost".into());
        soc_core::engine::syslog::syslog_token(&raw)
    }

    pub fn username(&self) -> String {
        let raw = self.username.clone().or_else(|| whoami::username().ok()).unwrap_or_else(|| "agentd".into());
        soc_core::engine::syslog::syslog_token(&raw)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.toml");
        std::fs::write(
            &path,
            "agent_id = \"004\"\npoll_interval = 5\n[[tail]]\npath = \"/var/log/auth.log\"\n\n[[tail]]\npath = \"/tmp/app.log\"\nformat = \"plain\"\n",
        )
        .unwrap();
        let mut c: AgentConfig = toml::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(c.agent_id.as_str(), "004");
        assert_eq!(c.tail[1].format, TailFormat::Plain);
        let env = HashMap::from([("SOC_AGENT_POLL_INTERVAL", "7"), ("SOC_AGENT_FIM", "/etc:/usr/bin")]);
        c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.poll_interval, 7);
        assert_eq!(c.fim, vec![PathBuf::from("/etc"), PathBuf::from("/usr/bin")]);
        let back: AgentConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_zero_poll_interval() {
        let c = AgentConfig { poll_interval: 0, ..AgentConfig::default() };
        assert!(c.validate().is_err());
        let mut c = AgentConfig::default();
        assert!(c.apply_env(|k| (k == "SOC_AGENT_ID").then(|| "12".to_string())).is_err());
    }
}
