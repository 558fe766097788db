//! What the agent needs from the manager, and the HTTP client that provides it.

use std::time::Duration;

use soc_core::wire::{parse_flag_file, ActiveResponseRequest, ApiError, FlagFile};
use soc_core::{AgentId, PluginId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApiFailure {
    #[error("manager unreachable: {0}")]
    Unreachable(String),
    #[error("manager answered {status} {kind}: {message}")]
    Rejected { status: u16, kind: String, message: String },
    #[error("unreadable answer: {0}")]
    BadAnswer(String),
}

impl ApiFailure {
    /// Worth trying again: transport failures and server-side trouble, but
    /// not a timed-out execution (the script did run).
    pub fn retryable(&self) -> bool {
        match self {
            Self::Unreachable(_) => true,
            Self::Rejected { status, .. } => *status >= 500 && *status != 504,
            Self::BadAnswer(_) => false,
        }
    }
}

pub trait ManagerApi: Send + Sync {
    /// `GET /shared/{agent}.json`
    fn flag_file(&self, agent: &AgentId) -> Result<FlagFile, ApiFailure>;
    /// `GET /plugins/{id}.zip?size=minimal`
    fn fetch_minimal(&self, id: &PluginId) -> Result<Vec<u8>, ApiFailure>;
    /// `POST /plugins/{id}/ar`
    fn active_response(&self, id: &PluginId, request: &ActiveResponseRequest) -> Result<(), ApiFailure>;
}

pub struct HttpManager {
    base: String,
    agent: ureq::Agent,
}

impl HttpManager {
    pub fn new(base: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build();
        Self { base: base.trim_end_matches('/').to_string(), agent: config.into() }
    }

    fn check(response: &mut ureq::http::Response<ureq::Body>) -> Result<(), ApiFailure> {
        let status = response.status().as_u16();
        if (200..300).contains(&status) {
            return Ok(());
        }
        let body = response.body_mut().read_to_string().unwrap_or_default();
        let (kind, message) = match serde_json::from_str::<ApiError>(&body) {
            Ok(e) => (e.error, e.message),
            Err(_) => ("HttpError".to_string(), body),
        };
        Err(ApiFailure::Rejected { status, kind, message })
    }
}

fn unreachable(e: ureq::Error) -> ApiFailure {
    ApiFailure::Unreachable(e.to_string())
}

impl ManagerApi for HttpManager {
    fn flag_file(&self, agent: &AgentId) -> Result<FlagFile, ApiFailure> {
        let mut response = self.agent.get(format!("{}/shared/{agent}.json", self.base)).call().map_err(unreachable)?;
        Self::check(&mut response)?;
        let body = response.body_mut().read_to_string().map_err(|e| ApiFailure::BadAnswer(e.to_string()))?;
        parse_flag_file(&body).map_err(|e| ApiFailure::BadAnswer(e.to_string()))
    }

    fn fetch_minimal(&self, id: &PluginId) -> Result<Vec<u8>, ApiFailure> {
        let mut response =
            self.agent.get(format!("{}/plugins/{id}.zip?size=minimal", self.base)).call().map_err(unreachable)?;
        Self::check(&mut response)?;
        response.body_mut().read_to_vec().map_err(|e| ApiFailure::Unreachable(e.to_string()))
    }

    fn active_response(&self, id: &PluginId, request: &ActiveResponseRequest) -> Result<(), ApiFailure> {
        let body = serde_json::to_string(request).expect("request serializes");
        let mut response = self
            .agent
            .post(format!("{}/plugins/{id}/ar", self.base))
            .header("Content-Type", "application/json")
            .send(body.as_str())
            .map_err(unreachable)?;
        Self::check(&mut response)
    }
}
