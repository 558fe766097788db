//! `metadata.json`: the plugin's identity, schedule and target agents.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::ids::{AgentId, PluginId};
use crate::version::Version;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetadataError {
    #[error("metadata is not well-formed JSON: {0}")]
    Malformed(String),
    #[error("metadata field `{field}`: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("metadata field `{field}`: {reason}")]
    InvariantViolation { field: String, reason: String },
}

impl MetadataError {
    fn schema(field: &str, reason: impl Into<String>) -> Self {
        Self::SchemaViolation { field: field.to_string(), reason: reason.into() }
    }

    fn invariant(field: &str, reason: impl Into<String>) -> Self {
        Self::InvariantViolation { field: field.to_string(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PluginMetadata {
    pub id: PluginId,
    pub name: String,
    pub description: String,
    pub version: Version,
    pub enabled: bool,
    /// Seconds between the end of one run and the start of the next.
    pub interval: u32,
    pub agents: Vec<AgentId>,
    /// Unknown top-level members, kept in their original order.
    pub extra: Map<String, Value>,
    /// Unknown members of the `script` object.
    pub script_extra: Map<String, Value>,
}

const KNOWN: [&str; 7] = ["id", "name", "description", "version", "enabled", "script", "agents"];

fn take<'a>(doc: &'a Map<String, Value>, field: &str) -> Result<&'a Value, MetadataError> {
    doc.get(field).ok_or_else(|| MetadataError::schema(field, "missing"))
}

fn string(doc: &Map<String, Value>, field: &str) -> Result<String, MetadataError> {
    take(doc, field)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| MetadataError::schema(field, "expected a string"))
}

pub fn parse_metadata(text: &str) -> Result<PluginMetadata, MetadataError> {
    let value: Value = serde_json::from_str(text).map_err(|e| MetadataError::Malformed(e.to_string()))?;
    from_value(value)
}

pub fn from_value(value: Value) -> Result<PluginMetadata, MetadataError> {
    let Value::Object(doc) = value else {
        return Err(MetadataError::schema("$", "expected an object"));
    };

    let id_text = string(&doc, "id")?;
    let name = string(&doc, "name")?;
    let description = string(&doc, "description")?;
    let version_text = string(&doc, "version")?;
    let enabled = take(&doc, "enabled")?
        .as_bool()
        .ok_or_else(|| MetadataError::schema("enabled", "expected a boolean"))?;
    let Value::Object(script) = take(&doc, "script")? else {
        return Err(MetadataError::schema("script", "expected an object"));
    };
    let interval = script
        .get("interval")
        .ok_or_else(|| MetadataError::schema("script.interval", "missing"))?;
    let interval = match interval.as_i64() {
        Some(n) if n < 1 => return Err(MetadataError::invariant("script.interval", format!("{n} is below 1"))),
        Some(n) => u32::try_from(n)
            .map_err(|_| MetadataError::invariant("script.interval", format!("{n} is too large")))?,
        None if interval.is_u64() => return Err(MetadataError::invariant("script.interval", "too large")),
        None => return Err(MetadataError::schema("script.interval", "expected an integer")),
    };
    let Value::Array(agent_values) = take(&doc, "agents")? else {
        return Err(MetadataError::schema("agents", "expected an array"));
    };

    let id = PluginId::parse(&id_text).map_err(|e| MetadataError::invariant("id", e.to_string()))?;
    let version = Version::parse(&version_text).map_err(|e| MetadataError::invariant("version", e.to_string()))?;
    let mut agents: Vec<AgentId> = Vec::with_capacity(agent_values.len());
    for agent in agent_values {
        let raw = agent.as_str().ok_or_else(|| MetadataError::schema("agents", "expected strings"))?;
        let agent = AgentId::parse(raw).map_err(|e| MetadataError::invariant("agents", e.to_string()))?;
        if agents.contains(&agent) {
            return Err(MetadataError::invariant("agents", format!("agent {agent} listed twice")));
        }
        agents.push(agent);
    }

    let extra = doc.iter().filter(|(k, _)| !KNOWN.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect();
    let script_extra = script.iter().filter(|(k, _)| k.as_str() != "interval").map(|(k, v)| (k.clone(), v.clone())).collect();

    Ok(PluginMetadata { id, name, description, version, enabled, interval, agents, extra, script_extra })
}

impl PluginMetadata {
    pub fn to_value(&self) -> Value {
        let mut script = Map::new();
        script.insert("interval".into(), self.interval.into());
        script.extend(self.script_extra.clone());
        let mut doc = Map::new();
        doc.insert("id".into(), self.id.as_str().into());
        doc.insert("name".into(), self.name.clone().into());
        doc.insert("description".into(), self.description.clone().into());
        doc.insert("version".into(), self.version.as_str().into());
        doc.insert("enabled".into(), self.enabled.into());
        doc.insert("script".into(), Value::Object(script));
        doc.insert("agents".into(), self.agents.iter().map(|a| Value::from(a.as_str())).collect());
        doc.extend(self.extra.clone());
        Value::Object(doc)
    }

    /// Canonical `metadata.json` text.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.to_value()).expect("metadata serializes");
        text.push('\n');
        text
    }

    pub fn runs_on(&self, agent: &AgentId) -> bool {
        self.agents.contains(agent)
    }
}

impl serde::Serialize for PluginMetadata {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> serde::Deserialize<'de> for PluginMetadata {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        from_value(Value::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}
