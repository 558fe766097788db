//! A slow, independent evaluator used to cross-check [`super::Engine`].
//!
//! Patterns are interpreted straight from their dialect source by a
//! backtracking matcher, decoder chains are tried exhaustively and every rule
//! is tested on its own before the first acceptor is picked.

use std::collections::BTreeMap;

use super::{make_alert, DecodedEvent, Decoder, LogEvent, Rule, Verdict};

#[derive(Debug, Clone, Copy)]
enum Op {
    Char(char),
    Set(fn(char) -> bool, usize, bool),
    Open(usize),
    Close(usize),
}

fn any_char(c: char) -> bool {
    c != '\n'
}
fn word(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}
fn digit(c: char) -> bool {
    c.is_ascii_digit()
}
fn space(c: char) -> bool {
    matches!(c, '\t' | '\n' | '\x0B' | '\x0C' | '\r' | ' ')
}

/// Compile to ops; `None` for anything outside the dialect.
fn compile(source: &str) -> Option<(Vec<Op>, usize)> {
    let chars: Vec<char> = source.chars().collect();
    let mut ops = Vec::new();
    let mut open = Vec::new();
    let mut groups = 0;
    let mut i = 0;
    while i < chars.len() {
        match chars[i] {
            '\\' => {
                let set: fn(char) -> bool = match chars.get(i + 1)? {
                    '.' => any_char,
                    'w' => word,
                    'd' => digit,
                    's' => space,
                    _ => return None,
                };
                i += 2;
                let (min, many) = match chars.get(i) {
                    Some('*') => (0, true),
                    Some('+') => (1, true),
                    _ => (1, false),
                };
                if many {
                    i += 1;
                }
                ops.push(Op::Set(set, min, many));
                continue;
            }
            '(' => {
                open.push(groups);
                ops.push(Op::Open(groups));
                groups += 1;
            }
            ')' => ops.push(Op::Close(open.pop()?)),
            c => ops.push(Op::Char(c)),
        }
        i += 1;
    }
    open.is_empty().then_some((ops, groups))
}

type Spans = Vec<(usize, usize)>;

fn step(ops: &[Op], text: &[char], pos: usize, to_end: bool, spans: &mut Spans) -> bool {
    let Some((op, rest)) = ops.split_first() else {
        return !to_end || pos == text.len();
    };
    match *op {
        Op::Char(c) => text.get(pos) == Some(&c) && step(rest, text, pos + 1, to_end, spans),
        Op::Set(set, min, many) => {
            let limit = if many { text.len() - pos } else { 1 };
            let run = text[pos..].iter().take(limit).take_while(|&&c| set(c)).count();
            (min..=run).rev().any(|n| step(rest, text, pos + n, to_end, spans))
        }
        Op::Open(g) | Op::Close(g) => {
            let saved = spans[g];
            if let Op::Open(_) = op {
                spans[g].0 = pos;
            } else {
                spans[g].1 = pos;
            }
            if step(rest, text, pos, to_end, spans) {
                return true;
            }
            spans[g] = saved;
            false
        }
    }
}

/// Leftmost match of `source` in `text`, returning its group texts.
pub fn search(source: &str, text: &str) -> Option<Vec<String>> {
    interpret(source, text, false)
}

/// Match of `source` against all of `text`.
pub fn whole(source: &str, text: &str) -> Option<Vec<String>> {
    interpret(source, text, true)
}

fn interpret(source: &str, text: &str, anchored: bool) -> Option<Vec<String>> {
    let (ops, groups) = compile(source)?;
    let chars: Vec<char> = text.chars().collect();
    let starts = if anchored { 0..=0 } else { 0..=chars.len() };
    for start in starts {
        let mut spans = vec![(0, 0); groups];
        if step(&ops, &chars, start, anchored, &mut spans) {
            return Some(spans.iter().map(|&(a, b)| chars[a..b].iter().collect()).collect());
        }
    }
    None
}

/// Decode by trying every root, then every child that belongs to it.
pub fn decode(message: &str, decoders: &[Decoder]) -> Option<DecodedEvent> {
    let mut roots = decoders
        .iter()
        .enumerate()
        .filter(|(_, d)| d.parent.is_none())
        .filter(|(_, d)| d.prematch.as_ref().is_some_and(|p| search(p.source(), message).is_some()));
    let (root_index, root) = roots.next()?;
    let mut owner = None;
    for (i, d) in decoders.iter().enumerate() {
        if d.parent.is_none() && d.name == root.name {
            owner = Some(i);
        }
        if owner != Some(root_index) || d.parent.as_deref() != Some(root.name.as_str()) {
            continue;
        }
        let regex = d.regex.as_ref()?;
        if let Some(values) = search(regex.source(), message) {
            let fields: BTreeMap<String, String> = d.order.iter().cloned().zip(values).collect();
            return Some(DecodedEvent { decoder_name: d.name.clone(), fields });
        }
    }
    Some(DecodedEvent { decoder_name: root.name.clone(), fields: BTreeMap::new() })
}

/// Every rule that accepts `decoded`, in document order.
pub fn accepting_rules<'r>(decoded: &DecodedEvent, rules: &'r [Rule]) -> Vec<&'r Rule> {
    rules
        .iter()
        .filter(|r| r.decoded_as == decoded.decoder_name)
        .filter(|r| {
            r.fields.iter().all(|m| {
                decoded
                    .fields
                    .get(&m.name)
                    .is_some_and(|v| whole(m.expected.source(), v).is_some())
            })
        })
        .collect()
}

pub fn evaluate(event: &LogEvent, decoders: &[Decoder], rules: &[Rule]) -> Verdict {
    let Some(decoded) = decode(&event.message, decoders) else {
        return Verdict::NoDecode;
    };
    match accepting_rules(&decoded, rules).first() {
        None => Verdict::NoMatch(decoded),
        Some(rule) if rule.level == 0 => Verdict::Suppressed { rule_id: rule.id, decoded },
        Some(rule) => Verdict::Alert(make_alert(rule, &decoded, event)),
    }
}
