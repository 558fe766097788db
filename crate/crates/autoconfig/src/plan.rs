//! Turning topology entries into an ordered list of deployment steps.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use soc_core::AgentId;

use crate::topology::{DeviceType, TopologyEntry};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Integrations {
    pub ticket_webhook: Option<String>,
    pub reputation_key: Option<String>,
    /// `http(s)://` base URL or `mock:<fixture>`.
    pub reputation_backend: Option<String>,
}

impl Integrations {
    pub fn is_empty(&self) -> bool {
        self.ticket_webhook.is_none() && self.reputation_key.is_none() && self.reputation_backend.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub api_port: u16,
    pub ingest_port: u16,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self { api_port: 55002, ingest_port: 1514 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    /// Elasticsearch / Kibana stand-ins.
    InstallStubService { service: String },
    InstallManager,
    ConfigureIntegrations,
    InstallAgent { agent_id: AgentId },
    RenderDeviceConfig,
}

impl Action {
    pub fn label(&self) -> String {
        match self {
            Action::InstallStubService { service } => format!("install {service}"),
            Action::InstallManager => "install manager".into(),
            Action::ConfigureIntegrations => "configure integrations".into(),
            Action::InstallAgent { agent_id } => format!("install agent {agent_id}"),
            Action::RenderDeviceConfig => "render syslog forwarding".into(),
        }
    }

    /// Position in the role precedence order.
    pub fn rank(&self) -> u8 {
        match self {
            Action::InstallStubService { service } if service == "elasticsearch" => 0,
            Action::InstallStubService { .. } => 1,
            Action::InstallManager => 2,
            Action::ConfigureIntegrations => 3,
            Action::InstallAgent { .. } => 4,
            Action::RenderDeviceConfig => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    /// Absent only for the integrations step.
    pub entry: Option<TopologyEntry>,
    pub action: Action,
    pub parameters: BTreeMap<String, String>,
}

impl Step {
    pub fn target(&self) -> &str {
        self.entry.as_ref().map_or("manager", |e| e.ip.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub steps: Vec<Step>,
    pub integrations: Integrations,
    pub options: PlanOptions,
}

impl DeploymentPlan {
    pub fn manager(&self) -> Option<&TopologyEntry> {
        self.steps.iter().find(|s| s.action == Action::InstallManager).and_then(|s| s.entry.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("agents or network devices are listed but there is no wazuh entry")]
    NoManager,
    #[error("more than one wazuh entry; a single manager is supported")]
    MultipleManagers,
    #[error("more than one {0} entry; clusters are not supported")]
    MultipleServers(DeviceType),
    #[error("address {0} appears more than once")]
    DuplicateIp(String),
}

/// Build the plan. Entries keep their topology order within a role.
/// Server roles may share one host (all-in-one); any other repeated address is an error.
pub fn plan_deployment(
    entries: &[TopologyEntry],
    integrations: &Integrations,
    options: PlanOptions,
) -> Result<DeploymentPlan, PlanError> {
    let mut seen: BTreeMap<&str, bool> = BTreeMap::new();
    for e in entries {
        let server = e.device_type.is_server();
        if let Some(prev_server) = seen.insert(&e.ip, server) {
            if !(prev_server && server) {
                return Err(PlanError::DuplicateIp(e.ip.clone()));
            }
        }
    }
    let mut server_roles = BTreeSet::new();
    for e in entries.iter().filter(|e| e.device_type.is_server()) {
        if !server_roles.insert(e.device_type) {
            return Err(match e.device_type {
                DeviceType::Wazuh => PlanError::MultipleManagers,
                other => PlanError::MultipleServers(other),
            });
        }
    }
    let manager = entries.iter().find(|e| e.device_type == DeviceType::Wazuh);
    let needs_manager = !integrations.is_empty() || entries.iter().any(|e| !e.device_type.is_server());
    if needs_manager && manager.is_none() {
        return Err(PlanError::NoManager);
    }

    let manager_params = |extra: &[(&str, String)]| {
        let mut p = BTreeMap::new();
        if let Some(m) = manager {
            p.insert("manager_ip".to_string(), m.ip.clone());
            p.insert("api_port".to_string(), options.api_port.to_string());
            p.insert("ingest_port".to_string(), options.ingest_port.to_string());
        }
        for (k, v) in extra {
            p.insert(k.to_string(), v.clone());
        }
        p
    };

    let mut steps = Vec::new();
    let mut next_agent = 1u16;
    for e in entries {
        let (action, parameters) = match e.device_type {
            DeviceType::Elastic => (Action::InstallStubService { service: "elasticsearch".into() }, manager_params(&[])),
            DeviceType::Kibana => (Action::InstallStubService { service: "kibana".into() }, manager_params(&[])),
            DeviceType::Wazuh => (Action::InstallManager, manager_params(&[])),
            DeviceType::Linux | DeviceType::Windows => {
                let agent_id = AgentId::from_number(next_agent).expect("agent ids exhausted");
                next_agent += 1;
                let params = manager_params(&[("platform", e.device_type.token().to_string()), ("agent_id", agent_id.to_string())]);
                (Action::InstallAgent { agent_id }, params)
            }
            DeviceType::Cisco | DeviceType::Juniper => {
                (Action::RenderDeviceConfig, manager_params(&[("vendor", e.device_type.token().to_string())]))
            }
        };
        steps.push(Step { entry: Some(e.clone()), action, parameters });
    }
    if !integrations.is_empty() {
        let mut extra = Vec::new();
        if let Some(url) = &integrations.ticket_webhook {
            extra.push(("ticket_webhook", url.clone()));
        }
        if let Some(key) = &integrations.reputation_key {
            extra.push(("reputation_key", key.clone()));
        }
        if let Some(backend) = &integrations.reputation_backend {
            extra.push(("reputation_backend", backend.clone()));
        }
        steps.push(Step { entry: None, action: Action::ConfigureIntegrations, parameters: manager_params(&extra) });
    }
    // Stable: ties keep topology order.
    steps.sort_by_key(|s| s.action.rank());
    Ok(DeploymentPlan { steps, integrations: integrations.clone(), options })
}
