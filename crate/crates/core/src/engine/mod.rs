//! Log analysis: Syslog parsing, decoding into fields, rule matching.
//!
//! Decoders and rules apply in strict document order: the first root decoder
//! whose prematch hits the message wins, then its first matching child
//! supplies fields; the first rule bound to the resulting decoder whose field
//! conditions all hold produces the alert.

pub mod alert;
pub mod decoder;
pub mod pattern;
pub mod reference;
pub mod rule;
pub mod syslog;
mod xml;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use alert::Alert;
pub use decoder::{parse_decoders, Decoder, DecoderDocError};
pub use rule::{parse_rules, FieldMatcher, Rule, RuleDocError};
pub use syslog::{LogEvent, LogSource};

/// Result of a successful decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedEvent {
    pub decoder_name: String,
    pub fields: BTreeMap<String, String>,
}

/// Indices of the child decoders attached to the root at `root`.
///
/// A child belongs to the closest root before it that carries its parent's
/// name, so identically named roots from different documents stay separate.
pub(crate) fn children_of(decoders: &[Decoder], root: usize) -> impl Iterator<Item = usize> + '_ {
    let name = &decoders[root].name;
    let shadowed_at = decoders[root + 1..]
        .iter()
        .position(|d| d.is_root() && &d.name == name)
        .map_or(decoders.len(), |offset| root + 1 + offset);
    (root + 1..shadowed_at).filter(move |&i| decoders[i].parent.as_ref() == Some(name))
}

/// Run `message` through the decoder chain.
pub fn decode(message: &str, decoders: &[Decoder]) -> Option<DecodedEvent> {
    let root = decoders.iter().position(|d| {
        d.is_root() && d.prematch.as_ref().is_some_and(|p| p.is_match(message))
    })?;
    for child in children_of(decoders, root) {
        let decoder = &decoders[child];
        let regex = decoder.regex.as_ref().expect("child decoders carry a regex");
        if let Some(values) = regex.captures(message) {
            return Some(DecodedEvent {
                decoder_name: decoder.name.clone(),
                fields: decoder.order.iter().cloned().zip(values).collect(),
            });
        }
    }
    Some(DecodedEvent { decoder_name: decoders[root].name.clone(), fields: BTreeMap::new() })
}

/// The first rule that accepts `decoded`.
pub fn match_rules<'r>(decoded: &DecodedEvent, rules: &'r [Rule]) -> Option<&'r Rule> {
    rules.iter().find(|rule| rule_accepts(rule, decoded))
}

pub(crate) fn rule_accepts(rule: &Rule, decoded: &DecodedEvent) -> bool {
    rule.decoded_as == decoded.decoder_name
        && rule
            .fields
            .iter()
            .all(|m| decoded.fields.get(&m.name).is_some_and(|value| m.matches(value)))
}

/// Build the alert `rule` raises for `event`.
pub fn make_alert(rule: &Rule, decoded: &DecodedEvent, event: &LogEvent) -> Alert {
    Alert {
        id: 0,
        rule_id: rule.id,
        level: rule.level,
        description: rule.description.clone(),
        group: rule.group.clone(),
        decoder: decoded.decoder_name.clone(),
        fields: decoded.fields.clone(),
        agent_id: event.agent_id.clone(),
        timestamp: event.timestamp,
        full_log: event.raw.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Decoders(#[from] DecoderDocError),
    #[error(transparent)]
    Rules(#[from] RuleDocError),
    #[error("rule {rule} is decoded_as unknown decoder `{decoder}`")]
    UnknownDecoder { rule: u32, decoder: String },
    #[error("rule {rule} tests field `{field}`, which decoder `{decoder}` never produces")]
    UnknownField { rule: u32, field: String, decoder: String },
}

/// What the engine concluded about one event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    NoDecode,
    NoMatch(DecodedEvent),
    /// A level-0 rule matched; nothing is raised.
    Suppressed { rule_id: u32, decoded: DecodedEvent },
    Alert(Alert),
}

/// An immutable, validated decoder and rule set.
#[derive(Debug, Clone, Default)]
pub struct Engine {
    decoders: Vec<Decoder>,
    rules: Vec<Rule>,
}

impl Engine {
    pub fn new(decoders: Vec<Decoder>, rules: Vec<Rule>) -> Result<Self, EngineError> {
        decoder::check_parents(&decoders)?;
        rule::check_unique(&rules)?;
        for rule in &rules {
            if !decoders.iter().any(|d| d.name == rule.decoded_as) {
                return Err(EngineError::UnknownDecoder { rule: rule.id, decoder: rule.decoded_as.clone() });
            }
            let producible: BTreeSet<&str> = decoders
                .iter()
                .filter(|d| !d.is_root() && d.name == rule.decoded_as)
                .flat_map(|d| d.order.iter().map(String::as_str))
                .collect();
            if let Some(m) = rule.fields.iter().find(|m| !producible.contains(m.name.as_str())) {
                return Err(EngineError::UnknownField {
                    rule: rule.id,
                    field: m.name.clone(),
                    decoder: rule.decoded_as.clone(),
                });
            }
        }
        Ok(Self { decoders, rules })
    }

    /// Parse and concatenate `(decoder document, rule document)` pairs in order.
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, EngineError> {
        let mut decoders = Vec::new();
        let mut rules = Vec::new();
        for (decoder_doc, rule_doc) in docs {
            decoders.extend(parse_decoders(decoder_doc)?);
            rules.extend(parse_rules(rule_doc)?);
        }
        Self::new(decoders, rules)
    }

    pub fn decoders(&self) -> &[Decoder] {
        &self.decoders
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn decode(&self, message: &str) -> Option<DecodedEvent> {
        decode(message, &self.decoders)
    }

    pub fn evaluate(&self, event: &LogEvent) -> Verdict {
        let Some(decoded) = self.decode(&event.message) else {
            return Verdict::NoDecode;
        };
        match match_rules(&decoded, &self.rules) {
            None => Verdict::NoMatch(decoded),
            Some(rule) if rule.level == 0 => Verdict::Suppressed { rule_id: rule.id, decoded },
            Some(rule) => Verdict::Alert(make_alert(rule, &decoded, event)),
        }
    }
}
