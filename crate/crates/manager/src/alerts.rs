//! Append-only alert journal with an in-memory index.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use chrono::NaiveDateTime;
use soc_core::engine::alert::TIMESTAMP_FORMAT;
use soc_core::engine::Alert;
use soc_core::wire::AlertPage;
use soc_core::AgentId;

use crate::error::{ManagerError, Result};

pub const DEFAULT_PAGE: usize = 100;
pub const MAX_PAGE: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlertFilter {
    pub min_level: u8,
    pub max_level: u8,
    pub agent: Option<AgentId>,
    pub since: Option<NaiveDateTime>,
    pub until: Option<NaiveDateTime>,
    pub offset: usize,
    pub limit: usize,
}

impl Default for AlertFilter {
    fn default() -> Self {
        Self { min_level: 0, max_level: 15, agent: None, since: None, until: None, offset: 0, limit: DEFAULT_PAGE }
    }
}

impl AlertFilter {
    /// From `GET /alerts` query parameters.
    pub fn from_query(query: &HashMap<String, String>) -> Result<Self> {
        fn num<T: std::str::FromStr>(query: &HashMap<String, String>, key: &str) -> Result<Option<T>> {
            query
                .get(key)
                .map(|v| v.parse().map_err(|_| ManagerError::BadFilter(format!("{key}={v}"))))
                .transpose()
        }
        fn time(query: &HashMap<String, String>, key: &str) -> Result<Option<NaiveDateTime>> {
            query
                .get(key)
                .map(|v| {
                    NaiveDateTime::parse_from_str(v, TIMESTAMP_FORMAT)
                        .map_err(|_| ManagerError::BadFilter(format!("{key}={v}")))
                })
                .transpose()
        }
        if let Some(key) = query
            .keys()
            .find(|k| !["min_level", "max_level", "agent", "since", "until", "offset", "limit"].contains(&k.as_str()))
        {
            return Err(ManagerError::BadFilter(format!("unknown parameter `{key}`")));
        }
        let filter = Self {
            min_level: num(query, "min_level")?.unwrap_or(0),
            max_level: num(query, "max_level")?.unwrap_or(15),
            agent: query
                .get("agent")
                .map(|a| AgentId::parse(a).map_err(|e| ManagerError::BadFilter(e.to_string())))
                .transpose()?,
            since: time(query, "since")?,
            until: time(query, "until")?,
            offset: num(query, "offset")?.unwrap_or(0),
            limit: num(query, "limit")?.unwrap_or(DEFAULT_PAGE),
        };
        if filter.min_level > filter.max_level || filter.max_level > 15 {
            return Err(ManagerError::BadFilter("level range".into()));
        }
        if filter.limit == 0 || filter.limit > MAX_PAGE {
            return Err(ManagerError::BadFilter(format!("limit must be within 1..={MAX_PAGE}")));
        }
        if let (Some(since), Some(until)) = (filter.since, filter.until) {
            if since > until {
                return Err(ManagerError::BadFilter("since is after until".into()));
            }
        }
        Ok(filter)
    }

    pub fn accepts(&self, alert: &Alert) -> bool {
        (self.min_level..=self.max_level).contains(&alert.level)
            && self.agent.as_ref().is_none_or(|a| *a == alert.agent_id)
            && self.since.is_none_or(|t| alert.timestamp >= t)
            && self.until.is_none_or(|t| alert.timestamp <= t)
    }
}

struct Inner {
    alerts: Vec<Alert>,
    journal: Option<BufWriter<File>>,
}

pub struct AlertStore {
    inner: Mutex<Inner>,
}

impl AlertStore {
    pub fn open(path: &Path) -> io::Result<Self> {
        let mut alerts = Vec::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Alert>(&line) {
                    Ok(alert) => alerts.push(alert),
                    Err(e) => log::warn!("skipping alert journal line {}: {e}", n + 1),
                }
            }
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let journal = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(Self { inner: Mutex::new(Inner { alerts, journal: Some(journal) }) })
    }

    pub fn in_memory() -> Self {
        Self { inner: Mutex::new(Inner { alerts: Vec::new(), journal: None }) }
    }

    /// Assign the next id and persist.
    pub fn append(&self, mut alert: Alert) -> io::Result<Alert> {
        let mut inner = self.inner.lock().unwrap();
        alert.id = inner.alerts.last().map_or(1, |a| a.id + 1);
        if let Some(journal) = inner.journal.as_mut() {
            serde_json::to_writer(&mut *journal, &alert)?;
            journal.write_all(b"\n")?;
            journal.flush()?;
        }
        inner.alerts.push(alert.clone());
        Ok(alert)
    }

    pub fn get(&self, id: u64) -> Option<Alert> {
        let inner = self.inner.lock().unwrap();
        let index = inner.alerts.binary_search_by_key(&id, |a| a.id).ok()?;
        Some(inner.alerts[index].clone())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().alerts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> Vec<Alert> {
        self.inner.lock().unwrap().alerts.clone()
    }

    /// Matching alerts, newest first.
    pub fn query(&self, filter: &AlertFilter) -> AlertPage {
        let inner = self.inner.lock().unwrap();
        let matching: Vec<&Alert> = inner.alerts.iter().rev().filter(|a| filter.accepts(a)).collect();
        AlertPage {
            total: matching.len(),
            offset: filter.offset,
            alerts: matching.into_iter().skip(filter.offset).take(filter.limit).map(Alert::to_record).collect(),
        }
    }
}
