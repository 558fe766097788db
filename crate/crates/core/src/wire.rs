//! JSON payloads exchanged between agents, the manager and the console.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::ids::{AgentId, PluginId};

/// One line of an agent's flag file: a plugin it must run, at a version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagEntry {
    pub id: PluginId,
    pub version: String,
}

pub type FlagFile = Vec<FlagEntry>;

/// Flag file as text, in the shared-directory layout.
pub fn flag_file_json(entries: &[FlagEntry]) -> String {
    let mut text = serde_json::to_string_pretty(entries).expect("flag entries serialize");
    text.push('\n');
    text
}

pub fn parse_flag_file(text: &str) -> Result<FlagFile, serde_json::Error> {
    serde_json::from_str(text)
}

/// True when `token` can travel as an active-response argument.
pub fn is_ar_token(token: &str) -> bool {
    !token.is_empty() && !token.chars().any(char::is_whitespace)
}

/// Body of `POST /plugins/{id}/ar`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveResponseRequest {
    pub agent_id: AgentId,
    pub args: Vec<String>,
    #[serde(with = "timestamp")]
    pub timestamp: NaiveDateTime,
}

impl ActiveResponseRequest {
    /// The first argument that breaks the no-whitespace rule, if any.
    pub fn bad_arg(&self) -> Option<&str> {
        self.args.iter().map(String::as_str).find(|a| !is_ar_token(a))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArOutcome {
    Completed,
    Failed,
    TimedOut,
}

/// What the manager did with one active-response request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveResponseRecord {
    pub plugin_id: PluginId,
    pub request: ActiveResponseRequest,
    pub outcome: ArOutcome,
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
}

/// Error body returned by every failing API call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    /// Stable machine-readable kind, e.g. `UnknownPlugin`.
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicketStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    pub id: u64,
    pub alert_id: u64,
    pub status: TicketStatus,
    #[serde(default)]
    pub assignee: String,
    #[serde(with = "timestamp")]
    pub created: NaiveDateTime,
    #[serde(default, with = "opt_timestamp", skip_serializing_if = "Option::is_none")]
    pub closed: Option<NaiveDateTime>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NewTicket {
    pub alert_id: u64,
    #[serde(default)]
    pub assignee: String,
}

/// Webhook payload for a ticket-worthy alert.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketNotice {
    pub ticket_id: u64,
    pub alert_id: u64,
    pub level: u8,
    pub rule_id: u32,
    pub description: String,
    pub agent_id: AgentId,
    #[serde(with = "timestamp")]
    pub timestamp: NaiveDateTime,
    pub text: String,
}

/// Page of `GET /alerts`, newest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertPage {
    pub total: usize,
    pub offset: usize,
    pub alerts: Vec<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestCounters {
    pub lines: u64,
    pub unparsed: u64,
    pub no_decode: u64,
    pub no_match: u64,
    pub suppressed: u64,
    pub alerts: u64,
    pub rejected_connections: u64,
}

/// Body of `GET /health`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub total_agents: usize,
    pub active_agents: usize,
    pub plugins: usize,
    pub enabled_plugins: usize,
    pub ingest: IngestCounters,
    pub ticket_deliveries: u64,
    pub dead_letters: u64,
}

/// Body of `POST /agents`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Enrollment {
    /// Requested id; the next free one is assigned when absent.
    #[serde(default)]
    pub id: Option<AgentId>,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub id: AgentId,
    pub name: String,
    pub active: bool,
    #[serde(default, with = "opt_timestamp", skip_serializing_if = "Option::is_none")]
    pub last_seen: Option<NaiveDateTime>,
}

/// Install and remove sets for a change of a plugin's agent list.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgentDiff {
    pub install: BTreeSet<AgentId>,
    pub remove: BTreeSet<AgentId>,
}

/// `install = new \ old`, `remove = old \ new`.
pub fn diff_agents(old: &BTreeSet<AgentId>, new: &BTreeSet<AgentId>) -> AgentDiff {
    AgentDiff {
        install: new.difference(old).cloned().collect(),
        remove: old.difference(new).cloned().collect(),
    }
}

/// Loose key/value bag used for free-form report sections.
pub type Fields = BTreeMap<String, String>;

pub mod timestamp {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub const FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

    pub fn serialize<S: Serializer>(ts: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&ts.format(FORMAT))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let raw = String::deserialize(d)?;
        NaiveDateTime::parse_from_str(&raw, FORMAT).map_err(serde::de::Error::custom)
    }
}

pub mod opt_timestamp {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &Option<NaiveDateTime>, s: S) -> Result<S::Ok, S::Error> {
        match ts {
            Some(ts) => super::timestamp::serialize(ts, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<NaiveDateTime>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|raw| NaiveDateTime::parse_from_str(&raw, super::timestamp::FORMAT).map_err(serde::de::Error::custom))
            .transpose()
    }
}
