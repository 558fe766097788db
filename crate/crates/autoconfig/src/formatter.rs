//! The deployment questionnaire and its rendering into topology text.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::topology::{render_topology, DeviceType, TopologyEntry, DELIMITER};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Host {
    pub ip: String,
    pub key_path: String,
    pub ssh_user: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentHost {
    pub device_type: DeviceType,
    #[serde(flatten)]
    pub host: Host,
}

/// Server lists hold at most one host each; clusters are not supported.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Answers {
    pub agents_only: bool,
    pub elastic: Vec<Host>,
    pub kibana: Vec<Host>,
    pub wazuh: Vec<Host>,
    pub agents: Vec<AgentHost>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("the topology has no entries")]
    EmptyTopology,
    #[error("invalid answer for {0}")]
    InvalidAnswer(String),
}

impl Answers {
    pub fn entries(&self) -> Result<Vec<TopologyEntry>, FormatError> {
        let servers = [(DeviceType::Elastic, &self.elastic), (DeviceType::Kibana, &self.kibana), (DeviceType::Wazuh, &self.wazuh)];
        let mut out = Vec::new();
        for (role, hosts) in servers {
            if self.agents_only && !hosts.is_empty() {
                return Err(FormatError::InvalidAnswer(format!("{role} (agents-only mode)")));
            }
            if hosts.len() > 1 {
                return Err(FormatError::InvalidAnswer(format!("{role} count (at most 1)")));
            }
            for host in hosts.iter() {
                out.push(entry(host, role, &format!("{role}"))?);
            }
        }
        for (i, agent) in self.agents.iter().enumerate() {
            if agent.device_type.is_server() {
                return Err(FormatError::InvalidAnswer(format!("agent {} device type", i + 1)));
            }
            out.push(entry(&agent.host, agent.device_type, &format!("{} agent {}", agent.device_type, i + 1))?);
        }
        if out.is_empty() {
            return Err(FormatError::EmptyTopology);
        }
        Ok(out)
    }
}

fn entry(host: &Host, device_type: DeviceType, what: &str) -> Result<TopologyEntry, FormatError> {
    for (field, value) in [("ip", &host.ip), ("key path", &host.key_path), ("ssh user", &host.ssh_user)] {
        let v = value.trim();
        if v.is_empty() || v.contains(DELIMITER) || v.contains('\n') {
            return Err(FormatError::InvalidAnswer(format!("{what} {field}")));
        }
    }
    Ok(TopologyEntry {
        ip: host.ip.trim().into(),
        key_path: host.key_path.trim().into(),
        device_type,
        ssh_user: host.ssh_user.trim().into(),
    })
}

pub fn formatter(answers: &Answers) -> Result<String, FormatError> {
    Ok(render_topology(&answers.entries()?))
}

/// Interactive questionnaire. Reads answers line by line; EOF is an error.
pub struct Questionnaire<'a, R, W> {
    input: &'a mut R,
    output: &'a mut W,
}

#[derive(Debug, thiserror::Error)]
pub enum AskError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("input ended before the questionnaire was complete")]
    Truncated,
    #[error(transparent)]
    Invalid(#[from] FormatError),
}

impl<'a, R: BufRead, W: Write> Questionnaire<'a, R, W> {
    pub fn new(input: &'a mut R, output: &'a mut W) -> Self {
        Self { input, output }
    }

    fn ask(&mut self, prompt: &str) -> Result<String, AskError> {
        write!(self.output, "{prompt}")?;
        self.output.flush()?;
        let mut line = String::new();
        if self.input.read_line(&mut line)? == 0 {
            return Err(AskError::Truncated);
        }
        Ok(line.trim().to_string())
    }

    fn count(&mut self, prompt: &str, max: u32) -> Result<u32, AskError> {
        let raw = self.ask(prompt)?;
        match raw.parse::<u32>() {
            Ok(n) if n <= max => Ok(n),
            _ => Err(FormatError::InvalidAnswer(format!("{} (0..={max})", prompt.trim().trim_end_matches(':'))).into()),
        }
    }

    fn host(&mut self, label: &str) -> Result<Host, AskError> {
        writeln!(self.output, "-- {label} --")?;
        Ok(Host {
            ip: self.ask("    IP: ")?,
            key_path: self.ask("    SSH key path: ")?,
            ssh_user: self.ask("    SSH user: ")?,
        })
    }

    pub fn run(mut self, agents_only: bool) -> Result<Answers, AskError> {
        let mut answers = Answers { agents_only, ..Answers::default() };
        if !agents_only {
            writeln!(self.output, "[1] All in one (single node deployment)?\n    OR\n[2] Distributed deployment?\n")?;
            match self.ask("[*] Which deployment (1,2)? ")?.as_str() {
                "1" => {
                    let host = self.host("all-in-one server")?;
                    answers.elastic.push(host.clone());
                    answers.kibana.push(host.clone());
                    answers.wazuh.push(host);
                }
                "2" => {
                    let servers: [(&str, fn(&mut Answers) -> &mut Vec<Host>); 3] = [
                        ("Elasticsearch servers (including the master)", |a| &mut a.elastic),
                        ("Kibana servers", |a| &mut a.kibana),
                        ("Wazuh servers (including the master)", |a| &mut a.wazuh),
                    ];
                    for (what, slot) in servers {
                        let n = self.count(&format!("[+] How many {what}: "), 1)?;
                        for i in 0..n {
                            let host = self.host(&format!("{what} {}", i + 1))?;
                            slot(&mut answers).push(host);
                        }
                    }
                }
                _ => return Err(FormatError::InvalidAnswer("deployment kind".into()).into()),
            }
        }
        writeln!(self.output, "\n-- Agents deployment --")?;
        for device_type in [DeviceType::Linux, DeviceType::Windows, DeviceType::Cisco, DeviceType::Juniper] {
            let n = self.count(&format!("[?] How many {device_type} agents: "), 999)?;
            for i in 0..n {
                let host = self.host(&format!("{device_type} agent {}", i + 1))?;
                answers.agents.push(AgentHost { device_type, host });
            }
        }
        writeln!(self.output, "-----")?;
        answers.entries()?;
        Ok(answers)
    }
}
