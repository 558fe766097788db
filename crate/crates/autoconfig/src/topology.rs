//! `topology.txt`: one host per line, `IP: SSH Key Path: Device Type: SSH User`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const DELIMITER: &str = ": ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceType {
    Linux,
    Windows,
    Cisco,
    Juniper,
    Elastic,
    Kibana,
    Wazuh,
}

impl DeviceType {
    pub const ALL: [DeviceType; 7] = [
        DeviceType::Linux,
        DeviceType::Windows,
        DeviceType::Cisco,
        DeviceType::Juniper,
        DeviceType::Elastic,
        DeviceType::Kibana,
        DeviceType::Wazuh,
    ];

    pub fn token(self) -> &'static str {
        match self {
            DeviceType::Linux => "linux",
            DeviceType::Windows => "windows",
            DeviceType::Cisco => "cisco",
            DeviceType::Juniper => "juniper",
            DeviceType::Elastic => "elastic",
            DeviceType::Kibana => "kibana",
            DeviceType::Wazuh => "wazuh",
        }
    }

    pub fn is_server(self) -> bool {
        matches!(self, DeviceType::Elastic | DeviceType::Kibana | DeviceType::Wazuh)
    }

    pub fn is_agent(self) -> bool {
        matches!(self, DeviceType::Linux | DeviceType::Windows)
    }

    pub fn is_network(self) -> bool {
        matches!(self, DeviceType::Cisco | DeviceType::Juniper)
    }
}

impl fmt::Display for DeviceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for DeviceType {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeviceType::ALL
            .into_iter()
            .find(|d| d.token() == s)
            .ok_or_else(|| TopologyError::UnknownDeviceType(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TopologyEntry {
    pub ip: String,
    pub key_path: String,
    pub device_type: DeviceType,
    pub ssh_user: String,
}

impl TopologyEntry {
    pub fn line(&self) -> String {
        [self.ip.as_str(), &self.key_path, self.device_type.token(), &self.ssh_user].join(DELIMITER)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("unknown device type {0:?}")]
    UnknownDeviceType(String),
}

/// Parse plaintext topology. Blank lines are skipped; line numbers count from 1.
pub fn parse_topology(text: &str) -> Result<Vec<TopologyEntry>, TopologyError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| TopologyError::BadLine { line: i + 1, reason };
        let fields: Vec<&str> = line.split(DELIMITER).map(str::trim).collect();
        if fields.len() != 4 {
            return Err(bad(format!(
                "expected 4 fields separated by \"{DELIMITER}\", found {} (paths may not contain \"{DELIMITER}\")",
                fields.len()
            )));
        }
        if let Some(pos) = fields.iter().position(|f| f.is_empty()) {
            return Err(bad(format!("field {} is empty", pos + 1)));
        }
        out.push(TopologyEntry {
            ip: fields[0].to_string(),
            key_path: fields[1].to_string(),
            device_type: fields[2].parse()?,
            ssh_user: fields[3].to_string(),
        });
    }
    Ok(out)
}

pub fn render_topology(entries: &[TopologyEntry]) -> String {
    entries.iter().map(|e| e.line() + "\n").collect()
}
