//! Decoder documents: named pattern definitions that recognise a log message
//! (root decoders, via `prematch`) and extract named fields from it (child
//! decoders, via `regex` + `order`).

use thiserror::Error;

use super::pattern::{Pattern, PatternError};
use super::xml;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecoderDocError {
    #[error("malformed decoder document: {0}")]
    Malformed(String),
    #[error("decoder `{decoder}` names unknown parent `{parent}`")]
    UnknownParent { decoder: String, parent: String },
    #[error("decoder `{decoder}`: order lists {got} fields but the regex has {expected} capture groups")]
    OrderArityMismatch { decoder: String, expected: usize, got: usize },
    #[error("decoder `{decoder}`: {source}")]
    Pattern {
        decoder: String,
        #[source]
        source: PatternError,
    },
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub name: String,
    pub prematch: Option<Pattern>,
    pub parent: Option<String>,
    pub regex: Option<Pattern>,
    pub order: Vec<String>,
}

impl Decoder {
    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }
}

/// Parse a decoder document, returning decoders in document order.
pub fn parse_decoders(doc: &str) -> Result<Vec<Decoder>, DecoderDocError> {
    let decoders = xml::with_elements(doc, DecoderDocError::Malformed, |elements| {
        elements.into_iter().map(parse_one).collect::<Result<Vec<_>, _>>()
    })?;
    check_parents(&decoders)?;
    Ok(decoders)
}

/// Every child must name a root decoder that appears before it.
pub(crate) fn check_parents(decoders: &[Decoder]) -> Result<(), DecoderDocError> {
    for (i, decoder) in decoders.iter().enumerate() {
        if let Some(parent) = &decoder.parent {
            let known = decoders[..i].iter().any(|d| d.is_root() && &d.name == parent);
            if !known {
                return Err(DecoderDocError::UnknownParent {
                    decoder: decoder.name.clone(),
                    parent: parent.clone(),
                });
            }
        }
    }
    Ok(())
}

fn parse_one(node: roxmltree::Node<'_, '_>) -> Result<Decoder, DecoderDocError> {
    let malformed = |msg: String| DecoderDocError::Malformed(msg);
    if node.tag_name().name() != "decoder" {
        return Err(malformed(format!("unexpected element <{}>", node.tag_name().name())));
    }
    let name = node
        .attribute("name")
        .map(str::trim)
        .filter(|n| !n.is_empty())
        .ok_or_else(|| malformed("<decoder> without a name attribute".into()))?
        .to_string();

    let mut prematch = None;
    let mut parent = None;
    let mut regex = None;
    let mut order = None;
    for child in node.children().filter(|c| c.is_element()) {
        let tag = child.tag_name().name();
        if xml::has_element_children(child) {
            return Err(malformed(format!("decoder `{name}`: <{tag}> must contain text only")));
        }
        let text = xml::folded_text(child);
        let slot = match tag {
            "prematch" => &mut prematch,
            "parent" => &mut parent,
            "regex" => &mut regex,
            "order" => &mut order,
            other => return Err(malformed(format!("decoder `{name}`: unexpected element <{other}>"))),
        };
        if slot.replace(text).is_some() {
            return Err(malformed(format!("decoder `{name}`: <{tag}> given twice")));
        }
    }

    let compile = |src: &str| {
        Pattern::search(src).map_err(|source| DecoderDocError::Pattern { decoder: name.clone(), source })
    };
    let prematch = prematch.as_deref().map(compile).transpose()?;
    let regex = regex.as_deref().map(compile).transpose()?;
    let order: Vec<String> = match order {
        None => Vec::new(),
        Some(text) => {
            let fields: Vec<String> = text.split(',').map(|f| f.trim().to_string()).collect();
            if fields.iter().any(String::is_empty) {
                return Err(malformed(format!("decoder `{name}`: empty field name in <order>")));
            }
            let mut seen = std::collections::HashSet::new();
            if let Some(dup) = fields.iter().find(|f| !seen.insert(f.as_str())) {
                return Err(malformed(format!("decoder `{name}`: field `{dup}` listed twice in <order>")));
            }
            fields
        }
    };
    let parent = parent.filter(|p| !p.is_empty());

    match (&parent, &prematch, &regex) {
        (None, None, _) => {
            return Err(malformed(format!("root decoder `{name}` has no <prematch>")));
        }
        (None, Some(_), Some(_)) => {
            return Err(malformed(format!(
                "root decoder `{name}` defines <regex>; field extraction belongs to child decoders"
            )));
        }
        (Some(_), _, None) => {
            return Err(malformed(format!("child decoder `{name}` has no <regex>")));
        }
        (Some(_), Some(_), _) => {
            return Err(malformed(format!("child decoder `{name}` may not define <prematch>")));
        }
        _ => {}
    }

    let expected = regex.as_ref().map_or(0, Pattern::group_count);
    if expected != order.len() {
        return Err(DecoderDocError::OrderArityMismatch { decoder: name, expected, got: order.len() });
    }

    Ok(Decoder { name, prematch, parent, regex, order })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The decoder template exactly as the plugin authors' guide prints it,
    /// including the line break inside the child regex.
    pub(crate) const TEMPLATE: &str = r#"<decoder name="DecoderNameForThePlugin">
<prematch>\.*SOC_NES: (\.+)</prematch>
</decoder>
<decoder name="DecoderNameForThePlugin">
<parent>DecoderNameForThePlugin</parent>
<regex>(TheNameOfThePlugin): (Value_1) (Value_2)
(Value_3)</regex>
<order>pluginName, val1, val2, val3</order>
</decoder>"#;

    #[test]
    fn parses_the_template() {
        let decoders = parse_decoders(TEMPLATE).unwrap();
        assert_eq!(decoders.len(), 2);
        let root = &decoders[0];
        assert_eq!(root.name, "DecoderNameForThePlugin");
        assert!(root.is_root());
        assert_eq!(root.prematch.as_ref().unwrap().source(), r"\.*SOC_NES: (\.+)");
        let child = &decoders[1];
        assert_eq!(child.parent.as_deref(), Some("DecoderNameForThePlugin"));
        let regex = child.regex.as_ref().unwrap();
        assert_eq!(regex.source(), "(TheNameOfThePlugin): (Value_1) (Value_2) (Value_3)");
        assert_eq!(regex.group_count(), 4);
        assert_eq!(child.order, ["pluginName", "val1", "val2", "val3"]);
    }

    #[test]
    fn empty_document_is_empty() {
        assert!(parse_decoders("").unwrap().is_empty());
        assert!(parse_decoders("  \n<!-- nothing -->\n").unwrap().is_empty());
    }

    #[test]
    fn child_before_parent_is_rejected() {
        let doc = r#"<decoder name="kid"><parent>root</parent><regex>(x)</regex><order>a</order></decoder>
<decoder name="root"><prematch>x</prematch></decoder>"#;
        assert_eq!(
            parse_decoders(doc).unwrap_err(),
            DecoderDocError::UnknownParent { decoder: "kid".into(), parent: "root".into() }
        );
    }

    #[test]
    fn order_arity_is_checked() {
        let doc = r#"<decoder name="r"><prematch>x</prematch></decoder>
<decoder name="c"><parent>r</parent><regex>(a) (b)</regex><order>one</order></decoder>"#;
        assert_eq!(
            parse_decoders(doc).unwrap_err(),
            DecoderDocError::OrderArityMismatch { decoder: "c".into(), expected: 2, got: 1 }
        );
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(parse_decoders("<decoder name='a'>"), Err(DecoderDocError::Malformed(_))));
        assert!(matches!(parse_decoders("<rule id='1'/>"), Err(DecoderDocError::Malformed(_))));
        assert!(matches!(
            parse_decoders("<decoder><prematch>x</prematch></decoder>"),
            Err(DecoderDocError::Malformed(_))
        ));
        assert!(matches!(
            parse_decoders("<decoder name='a'><regex>x</regex></decoder>"),
            Err(DecoderDocError::Malformed(_))
        ));
        assert!(matches!(
            parse_decoders(r"<decoder name='a'><prematch>\S</prematch></decoder>"),
            Err(DecoderDocError::Pattern { .. })
        ));
    }

    #[test]
    fn accepts_xml_declaration_and_comments() {
        let doc = "<?xml version=\"1.0\"?>\n<!-- BEGIN -->\n<decoder name=\"a\"><prematch>x</prematch></decoder>";
        assert_eq!(parse_decoders(doc).unwrap().len(), 1);
    }
}
