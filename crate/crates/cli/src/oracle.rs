//! Brute-force alert prediction for a simulated run.
//!
//! Every line handed to the manager is re-evaluated with the slow reference
//! matcher against the documents the harness believes were active at that
//! moment. Reputation follow-ups are predicted from the scenario's verdict
//! table rather than from what the manager recorded.

use std::collections::HashMap;
use std::sync::Arc;

use chrono::NaiveDateTime;
use soc_core::engine::syslog::{format_syslog_line, parse_syslog_line, LogSource};
use soc_core::engine::{reference, Decoder, Engine, LogEvent, Rule, Verdict};
use soc_core::AgentId;
use soc_manager::builtin;

use crate::scenario::ReputationSetup;

/// Decoder and rule documents in evaluation order.
pub type Documents = Arc<Vec<(String, String)>>;

#[derive(Debug, Clone)]
pub struct Delivered {
    pub at: NaiveDateTime,
    pub agent: AgentId,
    pub line: String,
    pub documents: Documents,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
pub struct AlertKey {
    pub rule_id: u32,
    pub level: u8,
    pub agent: String,
    pub description: String,
}

impl AlertKey {
    pub fn of(alert: &soc_core::engine::Alert) -> Self {
        Self {
            rule_id: alert.rule_id,
            level: alert.level,
            agent: alert.agent_id.to_string(),
            description: alert.description.clone(),
        }
    }
}

#[derive(Default)]
pub struct Oracle {
    compiled: HashMap<usize, (Vec<Decoder>, Vec<Rule>)>,
}

impl Oracle {
    fn lists(&mut self, docs: &Documents) -> &(Vec<Decoder>, Vec<Rule>) {
        let key = Arc::as_ptr(docs) as usize;
        self.compiled.entry(key).or_insert_with(|| {
            let engine = Engine::from_documents(docs.iter().map(|(d, r)| (d.as_str(), r.as_str())))
                .expect("active documents compile");
            (engine.decoders().to_vec(), engine.rules().to_vec())
        })
    }

    pub fn predict(&mut self, delivered: &[Delivered], reputation: Option<&ReputationSetup>) -> Vec<AlertKey> {
        let mut out = Vec::new();
        for d in delivered {
            let event = match parse_syslog_line(&d.line, &d.agent, LogSource::External, d.at) {
                Ok(e) => e,
                Err(unparsed) => unparsed.event,
            };
            let event = LogEvent { source: LogSource::of_agent_message(&event.message), ..event };
            let (decoders, rules) = self.lists(&d.documents);
            let Verdict::Alert(alert) = reference::evaluate(&event, decoders, rules) else { continue };
            out.push(AlertKey::of(&alert));
            if alert.group != builtin::FIM_GROUP {
                continue;
            }
            let (Some(file), Some(sha)) = (alert.fields.get("file"), alert.fields.get("sha256")) else { continue };
            let Some(rep) = reputation.filter(|r| !r.down) else { continue };
            let positives = rep.verdicts.get(&sha.to_ascii_lowercase()).copied().unwrap_or(0);
            if positives == 0 {
                continue;
            }
            let message = builtin::reputation_message(positives, rep.total, file, sha, &soc_manager::reputation::permalink(sha));
            let derived = LogEvent {
                timestamp: d.at,
                hostname: "manager".into(),
                username: "reputation".into(),
                raw: format_syslog_line(d.at, "manager", "reputation", &message),
                message,
                agent_id: d.agent.clone(),
                source: LogSource::External,
            };
            if let Verdict::Alert(a) = reference::evaluate(&derived, decoders, rules) {
                out.push(AlertKey::of(&a));
            }
        }
        out
    }
}
