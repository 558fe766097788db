//! Rule documents: predicates over decoded events that raise alerts.

use std::collections::HashSet;

use thiserror::Error;

use super::pattern::{Pattern, PatternError};
use super::xml;

pub const MAX_LEVEL: u8 = 15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleDocError {
    #[error("malformed rule document: {0}")]
    Malformed(String),
    #[error("rule id {0} is defined more than once")]
    DuplicateRuleId(u32),
    #[error("rule {rule}: level {level} is outside 0..=15")]
    LevelOutOfRange { rule: u32, level: i64 },
    #[error("rule {rule}, field `{field}`: {source}")]
    Pattern {
        rule: u32,
        field: String,
        #[source]
        source: PatternError,
    },
}

/// One `(field name, expected value)` condition of a rule.
#[derive(Debug, Clone)]
pub struct FieldMatcher {
    pub name: String,
    pub expected: Pattern,
}

impl FieldMatcher {
    pub fn matches(&self, value: &str) -> bool {
        self.expected.is_match(value)
    }
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub id: u32,
    pub level: u8,
    pub decoded_as: String,
    pub description: String,
    pub fields: Vec<FieldMatcher>,
    pub group: String,
}

/// Parse a rule document, returning rules in document order.
pub fn parse_rules(doc: &str) -> Result<Vec<Rule>, RuleDocError> {
    let rules = xml::with_elements(doc, RuleDocError::Malformed, |elements| {
        elements.into_iter().map(parse_one).collect::<Result<Vec<_>, _>>()
    })?;
    check_unique(&rules)?;
    Ok(rules)
}

pub(crate) fn check_unique(rules: &[Rule]) -> Result<(), RuleDocError> {
    let mut seen = HashSet::new();
    for rule in rules {
        if !seen.insert(rule.id) {
            return Err(RuleDocError::DuplicateRuleId(rule.id));
        }
    }
    Ok(())
}

fn parse_one(node: roxmltree::Node<'_, '_>) -> Result<Rule, RuleDocError> {
    let malformed = |msg: String| RuleDocError::Malformed(msg);
    if node.tag_name().name() != "rule" {
        return Err(malformed(format!("unexpected element <{}>", node.tag_name().name())));
    }
    let raw_id = node
        .attribute("id")
        .ok_or_else(|| malformed("<rule> without an id attribute".into()))?
        .trim();
    let id: u32 = raw_id
        .parse()
        .ok()
        .filter(|id| *id > 0)
        .ok_or_else(|| malformed(format!("rule id `{raw_id}` is not a positive integer")))?;
    let raw_level = node
        .attribute("level")
        .ok_or_else(|| malformed(format!("rule {id} has no level attribute")))?
        .trim();
    let level: i64 = raw_level
        .parse()
        .map_err(|_| malformed(format!("rule {id}: level `{raw_level}` is not an integer")))?;
    if !(0..=i64::from(MAX_LEVEL)).contains(&level) {
        return Err(RuleDocError::LevelOutOfRange { rule: id, level });
    }

    let mut decoded_as = None;
    let mut description = None;
    let mut group = None;
    let mut fields = Vec::new();
    for child in node.children().filter(|c| c.is_element()) {
        let tag = child.tag_name().name();
        if xml::has_element_children(child) {
            return Err(malformed(format!("rule {id}: <{tag}> must contain text only")));
        }
        let text = xml::folded_text(child);
        let slot = match tag {
            "decoded_as" => &mut decoded_as,
            "description" => &mut description,
            "group" => &mut group,
            "field" => {
                let name = child
                    .attribute("name")
                    .map(str::trim)
                    .filter(|n| !n.is_empty())
                    .ok_or_else(|| malformed(format!("rule {id}: <field> without a name")))?
                    .to_string();
                let expected = Pattern::whole(&text).map_err(|source| RuleDocError::Pattern {
                    rule: id,
                    field: name.clone(),
                    source,
                })?;
                fields.push(FieldMatcher { name, expected });
                continue;
            }
            other => return Err(malformed(format!("rule {id}: unexpected element <{other}>"))),
        };
        if slot.replace(text).is_some() {
            return Err(malformed(format!("rule {id}: <{tag}> given twice")));
        }
    }

    let decoded_as = decoded_as
        .filter(|d| !d.is_empty())
        .ok_or_else(|| malformed(format!("rule {id} has no <decoded_as>")))?;
    let description = description.ok_or_else(|| malformed(format!("rule {id} has no <description>")))?;

    Ok(Rule {
        id,
        level: level as u8,
        decoded_as,
        description,
        fields,
        group: group.unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The rule template with its id and level placeholders filled in; the
    /// printed template uses non-numeric placeholder text for both.
    const TEMPLATE: &str = r#"<rule id="100001" level=
"10">
<decoded_as>DecoderNameForThePlugin</decoded_as>
<description>TheNameOfThePlugin has been triggered
</description>
<field name="pluginName">TheNameOfThePlugin</field>
<field name="val1">The Value Of val1 variable</field>
<field name="val2">The Value Of val2 variable</field>
<field name="val3">The Value Of val3 variable</field>
<group>TheNameOfThePlugin</group>
</rule>"#;

    #[test]
    fn parses_the_template() {
        let rules = parse_rules(TEMPLATE).unwrap();
        assert_eq!(rules.len(), 1);
        let rule = &rules[0];
        assert_eq!(rule.id, 100001);
        assert_eq!(rule.level, 10);
        assert_eq!(rule.decoded_as, "DecoderNameForThePlugin");
        assert_eq!(rule.description, "TheNameOfThePlugin has been triggered");
        assert_eq!(rule.fields.len(), 4);
        assert_eq!(rule.fields[1].name, "val1");
        assert!(rule.fields[1].matches("The Value Of val1 variable"));
        assert!(!rule.fields[1].matches("The Value Of val1 variable!"));
        assert_eq!(rule.group, "TheNameOfThePlugin");
    }

    #[test]
    fn placeholder_id_and_level_are_malformed() {
        let doc = r#"<rule id="ruleID_For_DecoderX" level="AlertLevelToBeTriggered">
<decoded_as>d</decoded_as><description>x</description></rule>"#;
        assert!(matches!(parse_rules(doc), Err(RuleDocError::Malformed(_))));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let doc = r#"<rule id="7" level="3"><decoded_as>d</decoded_as><description>a</description></rule>
<rule id="7" level="4"><decoded_as>d</decoded_as><description>b</description></rule>"#;
        assert_eq!(parse_rules(doc).unwrap_err(), RuleDocError::DuplicateRuleId(7));
    }

    #[test]
    fn level_bounds() {
        let doc = |level: &str| {
            format!(r#"<rule id="1" level="{level}"><decoded_as>d</decoded_as><description>a</description></rule>"#)
        };
        assert_eq!(parse_rules(&doc("15")).unwrap()[0].level, 15);
        assert_eq!(parse_rules(&doc("0")).unwrap()[0].level, 0);
        assert_eq!(parse_rules(&doc("16")).unwrap_err(), RuleDocError::LevelOutOfRange { rule: 1, level: 16 });
        assert_eq!(parse_rules(&doc("-1")).unwrap_err(), RuleDocError::LevelOutOfRange { rule: 1, level: -1 });
    }

    #[test]
    fn required_children() {
        let no_decoder = r#"<rule id="1" level="3"><description>a</description></rule>"#;
        assert!(matches!(parse_rules(no_decoder), Err(RuleDocError::Malformed(_))));
        let no_description = r#"<rule id="1" level="3"><decoded_as>d</decoded_as></rule>"#;
        assert!(matches!(parse_rules(no_description), Err(RuleDocError::Malformed(_))));
        assert!(parse_rules("").unwrap().is_empty());
    }
}
