//! Helpers for the XML dialect used by decoder and rule documents.
//!
//! Documents are sequences of sibling elements without a single root, so
//! they are parsed inside a synthetic wrapper element.

use roxmltree::{Document, Node};

const WRAPPER_OPEN: &str = "<soc-document>";
const WRAPPER_CLOSE: &str = "</soc-document>";

/// Parse a rootless document and hand its top-level elements to `visit`.
pub(crate) fn with_elements<T, E>(
    doc: &str,
    malformed: impl Fn(String) -> E,
    visit: impl FnOnce(Vec<Node<'_, '_>>) -> Result<T, E>,
) -> Result<T, E> {
    let body = strip_declaration(doc);
    let wrapped = format!("{WRAPPER_OPEN}{body}{WRAPPER_CLOSE}");
    let parsed = Document::parse(&wrapped).map_err(|e| malformed(e.to_string()))?;
    let elements = parsed.root_element().children().filter(Node::is_element).collect();
    visit(elements)
}

fn strip_declaration(doc: &str) -> &str {
    let trimmed = doc.trim_start();
    if trimmed.starts_with("<?xml") {
        if let Some(end) = trimmed.find("?>") {
            return &trimmed[end + 2..];
        }
    }
    doc
}

/// Element text with line breaks folded: each line is trimmed, blank lines are
/// dropped and the rest are joined with single spaces.
pub(crate) fn folded_text(node: Node<'_, '_>) -> String {
    let raw: String = node
        .children()
        .filter(Node::is_text)
        .filter_map(|n| n.text())
        .collect();
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn has_element_children(node: Node<'_, '_>) -> bool {
    node.children().any(|c| c.is_element())
}
