//! File reputation lookups by content hash.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub positives: u32,
    pub total: u32,
    pub permalink: String,
}

pub trait ReputationBackend: Send + Sync {
    /// `Err` means the backend could not be asked.
    fn scan(&self, file: &str, sha256: &str) -> Result<Verdict, String>;
}

pub fn permalink(sha256: &str) -> String {
    format!("https://www.virustotal.com/gui/file/{sha256}/detection")
}

/// Fixture-driven backend.
///
/// ```json
/// {"total": 70, "verdicts": {"<sha256>": 45}, "down": false}
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockReputation {
    pub total: u32,
    pub verdicts: HashMap<String, u32>,
    pub down: bool,
}

impl MockReputation {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

impl ReputationBackend for MockReputation {
    fn scan(&self, _file: &str, sha256: &str) -> Result<Verdict, String> {
        if self.down {
            return Err("reputation backend unavailable".into());
        }
        let positives = self.verdicts.get(&sha256.to_ascii_lowercase()).copied().unwrap_or(0);
        Ok(Verdict { positives, total: self.total, permalink: permalink(sha256) })
    }
}

/// `GET <base>/<sha256>` with an `x-apikey` header, answering a [`Verdict`].
pub struct HttpReputation {
    base: String,
    key: Option<String>,
    agent: ureq::Agent,
}

impl HttpReputation {
    pub fn new(base: &str, key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(10))).build();
        Self { base: base.trim_end_matches('/').to_string(), key, agent: config.into() }
    }
}

impl ReputationBackend for HttpReputation {
    fn scan(&self, _file: &str, sha256: &str) -> Result<Verdict, String> {
        let mut request = self.agent.get(format!("{}/{sha256}", self.base));
        if let Some(key) = &self.key {
            request = request.header("x-apikey", key);
        }
        let mut response = request.call().map_err(|e| e.to_string())?;
        let body = response.body_mut().read_to_string().map_err(|e| e.to_string())?;
        serde_json::from_str(&body).map_err(|e| e.to_string())
    }
}

/// Backend for a configuration value (`mock:<path>` or an HTTP base URL).
pub fn from_spec(spec: &str, key: Option<String>) -> Result<Box<dyn ReputationBackend>, String> {
    if let Some(path) = spec.strip_prefix("mock:") {
        Ok(Box::new(MockReputation::load(Path::new(path))?))
    } else if spec.starts_with("http://") || spec.starts_with("https://") {
        Ok(Box::new(HttpReputation::new(spec, key)))
    } else {
        Err(format!("unsupported reputation backend `{spec}`"))
    }
}
