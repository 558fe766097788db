//! Scenario files: a timeline of actions on a virtual clock plus the
//! outcomes expected at the end.
//!
//! ```toml
//! name = "ssh_fail"
//! poll_interval = 3          # agent flag-file polling, seconds
//! run_for = 20               # seconds after the last event (default 15)
//!
//! [manager]
//! ticket_webhook = true      # record notices instead of posting them
//! ticket_threshold = 5
//! reputation = { total = 70, verdicts = { "<sha256>" = 45 } }
//!
//! [[agents]]
//! id = "004"
//! tail = ["logs/auth.log"]   # relative to the agent's sandbox
//! fim = ["watched"]
//!
//! [[plugins]]                # imported before the clock starts
//! sample = "showcase"        # or dir = "plugins/level_probe" (relative to the scenario file)
//!
//! [[events]]
//! at = 1
//! action = "inject_log"      # see `Action` for the full set
//! agent = "004"
//! file = "logs/auth.log"     # omit to hand the line straight to the shipper
//! line = "..."
//!
//! [expect]
//! alerts = [{ level = 5, description = "authentication failed", agent = "004" }]
//! tickets = 1
//! ar_invocations = [["quarantine", "4242", "cat"]]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use soc_autoconfig::Answers;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub poll_interval: u64,
    pub run_for: u64,
    pub manager: ManagerSetup,
    pub agents: Vec<AgentSetup>,
    pub plugins: Vec<PluginSource>,
    pub events: Vec<Event>,
    pub expect: Expect,
    /// Directory that relative plugin paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManagerSetup {
    pub ticket_webhook: bool,
    pub ticket_threshold: u8,
    pub webhook_down: bool,
    pub reputation: Option<ReputationSetup>,
}

impl Default for ManagerSetup {
    fn default() -> Self {
        Self { ticket_webhook: false, ticket_threshold: 5, webhook_down: false, reputation: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReputationSetup {
    pub total: u32,
    pub verdicts: BTreeMap<String, u32>,
    pub down: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSetup {
    pub id: String,
    #[serde(default)]
    pub tail: Vec<String>,
    #[serde(default)]
    pub fim: Vec<String>,
    #[serde(default = "default_fim_interval")]
    pub fim_interval: u64,
}

fn default_fim_interval() -> u64 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PluginSource {
    Sample { sample: String },
    Dir { dir: PathBuf },
}

impl PluginSource {
    pub fn from_parts(sample: &Option<String>, dir: &Option<PathBuf>) -> Option<Self> {
        match (sample, dir) {
            (Some(sample), None) => Some(Self::Sample { sample: sample.clone() }),
            (None, Some(dir)) => Some(Self::Dir { dir: dir.clone() }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub at: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    /// Append to a tailed file, or hand lines directly to the agent's shipper.
    InjectLog {
        agent: String,
        #[serde(default)]
        file: Option<String>,
        #[serde(default)]
        line: Option<String>,
        #[serde(default)]
        lines: Vec<String>,
    },
    FileOp {
        agent: String,
        op: FileOp,
        path: String,
        #[serde(default)]
        content: String,
    },
    /// Exactly one of `sample` and `dir`.
    ImportPlugin {
        #[serde(default)]
        sample: Option<String>,
        #[serde(default)]
        dir: Option<PathBuf>,
    },
    EnablePlugin { plugin: String },
    DisablePlugin { plugin: String },
    DeletePlugin { plugin: String },
    BumpVersion { plugin: String, version: String },
    SetAgents { plugin: String, agents: Vec<String> },
    /// Close a ticket by its 1-based creation order.
    CloseTicket { ticket: u64 },
    /// Questionnaire -> topology -> vault -> parse -> plan, executed through the ssh stub.
    RunFormatterAnswers {
        answers: Answers,
        #[serde(default = "default_passphrase")]
        passphrase: String,
    },
}

fn default_passphrase() -> String {
    "scenario".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileOp {
    Create,
    Append,
    Modify,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedAlert {
    pub level: u8,
    /// Fragment of the rule description.
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub agent: Option<String>,
    #[serde(default)]
    pub rule: Option<u32>,
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expect {
    /// Every observed alert must be claimed by exactly one expectation.
    pub alerts: Option<Vec<ExpectedAlert>>,
    pub tickets: Option<usize>,
    pub closed_tickets: Option<usize>,
    pub webhook_deliveries: Option<usize>,
    pub dead_letters: Option<usize>,
    pub reputation_scans: Option<usize>,
    pub ar_invocations: Option<Vec<Vec<String>>>,
    /// Transcript kinds that must appear in this order (other entries may interleave).
    pub interactions: Option<Vec<String>>,
    /// Labels of the deployment steps planned by `run_formatter_answers`.
    pub plan: Option<Vec<String>>,
    /// Manager ingest counters by name.
    pub counters: BTreeMap<String, u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioParseError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl Scenario {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ScenarioParseError> {
        let mut scenario: Scenario = toml::from_str(text)
            .map_err(|e| ScenarioParseError::Syntax { path: base_dir.to_path_buf(), message: e.to_string() })?;
        scenario.base_dir = base_dir.to_path_buf();
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioParseError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioParseError::Read { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base).map_err(|e| match e {
            ScenarioParseError::Syntax { message, .. } => ScenarioParseError::Syntax { path: path.into(), message },
            other => other,
        })
    }

    pub fn poll(&self) -> u64 {
        if self.poll_interval == 0 { 3 } else { self.poll_interval }
    }

    pub fn tail(&self) -> u64 {
        if self.run_for == 0 { 15 } else { self.run_for }
    }

    pub fn validate(&self) -> Result<(), ScenarioParseError> {
        let invalid = |m: String| Err(ScenarioParseError::Invalid(m));
        if self.events.windows(2).any(|w| w[0].at >= w[1].at) {
            return invalid("event times must be strictly increasing".into());
        }
        if self.agents.is_empty() {
            return invalid("at least one agent is required".into());
        }
        for a in &self.agents {
            if soc_core::AgentId::parse(&a.id).is_err() {
                return invalid(format!("bad agent id {:?}", a.id));
            }
        }
        let known = |id: &str| self.agents.iter().any(|a| a.id == id);
        for e in &self.events {
            match &e.action {
                Action::InjectLog { agent, line, lines, .. } => {
                    if !known(agent) {
                        return invalid(format!("event at {} names undeclared agent {agent}", e.at));
                    }
                    if line.is_none() && lines.is_empty() {
                        return invalid(format!("inject_log at {} has no line", e.at));
                    }
                }
                Action::ImportPlugin { sample, dir } if PluginSource::from_parts(sample, dir).is_none() => {
                    return invalid(format!("import_plugin at {} needs exactly one of sample and dir", e.at));
                }
                Action::FileOp { agent, .. } if !known(agent) => {
                    return invalid(format!("event at {} names undeclared agent {agent}", e.at));
                }
                Action::SetAgents { agents, .. } if agents.iter().any(|a| soc_core::AgentId::parse(a).is_err()) => {
                    return invalid(format!("bad agent id in set_agents at {}", e.at));
                }
                _ => {}
            }
        }
        Ok(())
    }
}
