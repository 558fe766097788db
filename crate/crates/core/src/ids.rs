//! Identifier newtypes shared by the manager and the agents.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("plugin id `{0}` is not 32 hex digits once dashes are removed")]
    BadPluginId(String),
    #[error("agent id `{0}` is not exactly three decimal digits")]
    BadAgentId(String),
}

/// Plugin identifier in canonical form: 32 lowercase hex digits.
///
/// Input may carry dashes (UUID style) and any letter case. Two inputs name
/// the same plugin iff their canonical forms are equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PluginId(String);

impl PluginId {
    pub fn parse(raw: &str) -> Result<Self, IdError> {
        let canonical = normalize_plugin_id(raw).ok_or_else(|| IdError::BadPluginId(raw.to_string()))?;
        Ok(Self(canonical))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Strip dashes and lowercase; `None` unless exactly 32 hex digits remain.
pub fn normalize_plugin_id(raw: &str) -> Option<String> {
    let canonical: String = raw
        .chars()
        .filter(|c| *c != '-')
        .map(|c| c.to_ascii_lowercase())
        .collect();
    (canonical.len() == 32 && canonical.bytes().all(|b| b.is_ascii_hexdigit())).then_some(canonical)
}

impl fmt::Display for PluginId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for PluginId {
    type Err = IdError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for PluginId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for PluginId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Self::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Agent identifier: a zero-padded three digit decimal string such as `004`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId(String);

impl AgentId {
    pub fn parse(raw: &str) -> Result<Self, IdError> {
        if raw.len() == 3 && raw.bytes().all(|b| b.is_ascii_digit()) {
            Ok(Self(raw.to_string()))
        } else {
            Err(IdError::BadAgentId(raw.to_string()))
        }
    }

    /// Agent id for a sequence number; `None` above 999.
    pub fn from_number(n: u16) -> Option<Self> {
        (n <= 999).then(|| Self(format!("{n:03}")))
    }

    pub fn number(&self) -> u16 {
        self.0.parse().expect("agent id is three digits")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for AgentId {
    type Err = IdError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for AgentId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for AgentId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Self::parse(&raw).map_err(serde::de::Error::custom)
    }
}
