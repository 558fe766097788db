//! The composite local decoder and rule documents.
//!
//! Each enabled plugin contributes one fragment, wrapped in comment markers
//! carrying its id. Fragments are kept in id order so the document depends
//! only on the enabled set, never on the order plugins were enabled in.

use soc_core::PluginId;

fn begin(id: &PluginId) -> String {
    format!("<!-- BEGIN plugin {id} -->\n")
}

fn end(id: &PluginId) -> String {
    format!("<!-- END plugin {id} -->\n")
}

const BEGIN_PREFIX: &str = "<!-- BEGIN plugin ";

/// Fragment text as stored: no XML declaration, one trailing newline.
pub fn normalize_fragment(text: &str) -> String {
    let mut body = text.trim_start_matches('\u{feff}').trim_start();
    if body.starts_with("<?xml") {
        if let Some(end) = body.find("?>") {
            body = &body[end + 2..];
        }
    }
    let mut out = body.trim_matches(|c| c == '\n' || c == '\r').to_string();
    out.push('\n');
    out
}

fn block(id: &PluginId, fragment: &str) -> String {
    format!("{}{}{}", begin(id), normalize_fragment(fragment), end(id))
}

/// Ids whose fragments appear in `doc`, in document order.
pub fn fragment_ids(doc: &str) -> Vec<String> {
    doc.lines()
        .filter_map(|l| l.strip_prefix(BEGIN_PREFIX))
        .filter_map(|rest| rest.strip_suffix(" -->"))
        .map(str::to_owned)
        .collect()
}

/// Insert `id`'s fragment at its sorted position. `None` if already present.
pub fn insert(doc: &str, id: &PluginId, fragment: &str) -> Option<String> {
    if doc.contains(&begin(id)) {
        return None;
    }
    let mut at = doc.len();
    let mut offset = 0;
    for line in doc.split_inclusive('\n') {
        if let Some(other) = line.strip_prefix(BEGIN_PREFIX).and_then(|r| r.strip_suffix(" -->\n")) {
            if other > id.as_str() {
                at = offset;
                break;
            }
        }
        offset += line.len();
    }
    let mut out = String::with_capacity(doc.len() + fragment.len() + 80);
    out.push_str(&doc[..at]);
    if !out.is_empty() && !out.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(&block(id, fragment));
    out.push_str(&doc[at..]);
    Some(out)
}

/// Remove `id`'s fragment. `None` if it is not present.
pub fn remove(doc: &str, id: &PluginId) -> Option<String> {
    let start = doc.find(&begin(id))?;
    let end_marker = end(id);
    let stop = doc[start..].find(&end_marker)? + start + end_marker.len();
    Some(format!("{}{}", &doc[..start], &doc[stop..]))
}

/// Document for exactly `fragments`, built from nothing.
pub fn rebuild<'a>(fragments: impl IntoIterator<Item = (&'a PluginId, &'a str)>) -> String {
    let mut sorted: Vec<_> = fragments.into_iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    sorted.into_iter().map(|(id, text)| block(id, text)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn id(n: u8) -> PluginId {
        PluginId::parse(&format!("{n:032x}")).unwrap()
    }

    #[test]
    fn insert_remove_is_identity() {
        let base = rebuild([(&id(2), "<a/>")]);
        let with = insert(&base, &id(1), "<?xml version=\"1.0\"?>\n<b/>\n\n").unwrap();
        assert_eq!(fragment_ids(&with), [id(1).to_string(), id(2).to_string()]);
        assert!(with.contains("<b/>\n<!-- END"));
        assert!(!with.contains("<?xml"));
        assert_eq!(remove(&with, &id(1)).unwrap(), base);
        assert_eq!(insert(&with, &id(1), "<b/>"), None);
        assert_eq!(remove(&base, &id(1)), None);
    }

    proptest! {
        #[test]
        fn incremental_equals_rebuild(ops in prop::collection::vec((0u8..5, any::<bool>()), 0..40)) {
            let mut doc = String::new();
            let mut enabled: BTreeMap<PluginId, String> = BTreeMap::new();
            for (n, add) in ops {
                let text = format!("<decoder name=\"p{n}\"><prematch>p{n}</prematch></decoder>");
                if add {
                    if let Some(next) = insert(&doc, &id(n), &text) {
                        doc = next;
                        enabled.insert(id(n), text);
                    }
                } else if let Some(next) = remove(&doc, &id(n)) {
                    doc = next;
                    enabled.remove(&id(n));
                }
                let fresh = rebuild(enabled.iter().map(|(k, v)| (k, v.as_str())));
                prop_assert_eq!(&doc, &fresh);
            }
        }
    }
}
