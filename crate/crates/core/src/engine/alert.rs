//! Alerts and their flat record serialization.

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::ids::AgentId;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alert {
    /// Store-assigned sequence number; zero until persisted.
    pub id: u64,
    pub rule_id: u32,
    pub level: u8,
    pub description: String,
    pub group: String,
    pub decoder: String,
    pub fields: BTreeMap<String, String>,
    pub agent_id: AgentId,
    pub timestamp: NaiveDateTime,
    pub full_log: String,
}

impl Alert {
    /// Flat record with dotted keys (`rule.level`, `data.<field>`, ...).
    pub fn to_record(&self) -> Map<String, Value> {
        let mut record = Map::new();
        record.insert("id".into(), self.id.into());
        record.insert("timestamp".into(), self.timestamp.format(TIMESTAMP_FORMAT).to_string().into());
        record.insert("agent.id".into(), self.agent_id.as_str().into());
        record.insert("rule.id".into(), self.rule_id.into());
        record.insert("rule.level".into(), self.level.into());
        record.insert("rule.description".into(), self.description.clone().into());
        record.insert("rule.group".into(), self.group.clone().into());
        record.insert("decoder.name".into(), self.decoder.clone().into());
        record.insert("full_log".into(), self.full_log.clone().into());
        for (name, value) in &self.fields {
            record.insert(format!("data.{name}"), value.clone().into());
        }
        record
    }

    pub fn from_record(record: &Map<String, Value>) -> Result<Self, String> {
        let text = |key: &str| -> Result<String, String> {
            record
                .get(key)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| format!("missing or non-string `{key}`"))
        };
        let number = |key: &str| -> Result<u64, String> {
            record.get(key).and_then(Value::as_u64).ok_or_else(|| format!("missing or non-integer `{key}`"))
        };
        let timestamp = NaiveDateTime::parse_from_str(&text("timestamp")?, TIMESTAMP_FORMAT)
            .map_err(|e| format!("bad timestamp: {e}"))?;
        let agent_id = AgentId::parse(&text("agent.id")?).map_err(|e| e.to_string())?;
        let level = u8::try_from(number("rule.level")?).map_err(|_| "rule.level out of range".to_string())?;
        let rule_id = u32::try_from(number("rule.id")?).map_err(|_| "rule.id out of range".to_string())?;
        let fields = record
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("data.").map(|name| (name, v)))
            .map(|(name, v)| {
                v.as_str()
                    .map(|s| (name.to_string(), s.to_string()))
                    .ok_or_else(|| format!("non-string data.{name}"))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            id: number("id")?,
            rule_id,
            level,
            description: text("rule.description")?,
            group: text("rule.group")?,
            decoder: text("decoder.name")?,
            fields,
            agent_id,
            timestamp,
            full_log: text("full_log")?,
        })
    }
}

impl Serialize for Alert {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_record().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Alert {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let record = Map::deserialize(deserializer)?;
        Self::from_record(&record).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_uses_dotted_names() {
        let alert = Alert {
            id: 3,
            rule_id: 100111,
            level: 15,
            description: "ZerodayFileWatch: /etc/shadow has been read".into(),
            group: "zeroday".into(),
            decoder: "zeroday_fileWatch".into(),
            fields: [("filePath", "/etc/shadow"), ("openedBy", "cat"), ("pid", "22276")]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            agent_id: AgentId::parse("004").unwrap(),
            timestamp: NaiveDateTime::parse_from_str("2021-01-28T18:49:09", TIMESTAMP_FORMAT).unwrap(),
            full_log: "Jan 28 18:49:09 h root: SOC_NES: ZerodayFileWatch: /etc/shadow cat 22276".into(),
        };
        let json = serde_json::to_value(&alert).unwrap();
        assert_eq!(json["agent.id"], "004");
        assert_eq!(json["rule.level"], 15);
        assert_eq!(json["decoder.name"], "zeroday_fileWatch");
        assert_eq!(json["data.filePath"], "/etc/shadow");
        assert_eq!(json["timestamp"], "2021-01-28T18:49:09");
        let back: Alert = serde_json::from_value(json).unwrap();
        assert_eq!(back, alert);
    }
}
