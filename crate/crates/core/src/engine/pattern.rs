//! The decoder pattern dialect and its translation to [`regex`] syntax.
//!
//! Supported tokens:
//!
//! | dialect | meaning                       |
//! |---------|-------------------------------|
//! | `\.`    | any single character          |
//! | `\w`    | word character `[A-Za-z0-9_]` |
//! | `\d`    | digit `[0-9]`                 |
//! | `\s`    | whitespace                    |
//! | `(` `)` | capture group                 |
//!
//! A class token may be followed by `*` or `+`. Every other character,
//! including a `*` or `+` that does not follow a class token, is literal.
//! Any other backslash escape is rejected.

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("unsupported pattern token `{0}`")]
    UnsupportedToken(String),
    #[error("unbalanced capture group in `{0}`")]
    UnbalancedGroup(String),
    #[error("pattern `{pattern}` failed to compile: {reason}")]
    Compile { pattern: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Any,
    Word,
    Digit,
    Space,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repeat {
    One,
    ZeroOrMore,
    OneOrMore,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Literal(char),
    Class(Class, Repeat),
    Open,
    Close,
}

/// Split a dialect pattern into tokens, checking group balance.
pub fn tokenize(pattern: &str) -> Result<Vec<Token>, PatternError> {
    let mut tokens = Vec::new();
    let mut chars = pattern.chars().peekable();
    let mut depth = 0usize;
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                let class = match chars.next() {
                    Some('.') => Class::Any,
                    Some('w') => Class::Word,
                    Some('d') => Class::Digit,
                    Some('s') => Class::Space,
                    Some(other) => return Err(PatternError::UnsupportedToken(format!("\\{other}"))),
                    None => return Err(PatternError::UnsupportedToken("\\".into())),
                };
                let repeat = match chars.peek() {
                    Some('*') => Repeat::ZeroOrMore,
                    Some('+') => Repeat::OneOrMore,
                    _ => Repeat::One,
                };
                if repeat != Repeat::One {
                    chars.next();
                }
                tokens.push(Token::Class(class, repeat));
            }
            '(' => {
                depth += 1;
                tokens.push(Token::Open);
            }
            ')' => {
                if depth == 0 {
                    return Err(PatternError::UnbalancedGroup(pattern.to_string()));
                }
                depth -= 1;
                tokens.push(Token::Close);
            }
            other => tokens.push(Token::Literal(other)),
        }
    }
    if depth != 0 {
        return Err(PatternError::UnbalancedGroup(pattern.to_string()));
    }
    Ok(tokens)
}

/// Translate a dialect pattern into the equivalent `regex` crate syntax.
pub fn translate(pattern: &str) -> Result<String, PatternError> {
    let mut out = String::with_capacity(pattern.len() * 2);
    for token in tokenize(pattern)? {
        match token {
            Token::Literal(c) => out.push_str(&regex::escape(c.encode_utf8(&mut [0; 4]))),
            Token::Class(class, repeat) => {
                out.push_str(match class {
                    Class::Any => ".",
                    Class::Word => "[A-Za-z0-9_]",
                    Class::Digit => "[0-9]",
                    Class::Space => r"[\t\n\x0B\x0C\r ]",
                });
                match repeat {
                    Repeat::One => {}
                    Repeat::ZeroOrMore => out.push('*'),
                    Repeat::OneOrMore => out.push('+'),
                }
            }
            Token::Open => out.push('('),
            Token::Close => out.push(')'),
        }
    }
    Ok(out)
}

/// A compiled dialect pattern.
#[derive(Debug, Clone)]
pub struct Pattern {
    source: String,
    regex: Regex,
}

impl Pattern {
    /// Compile for unanchored search (decoders).
    pub fn search(source: &str) -> Result<Self, PatternError> {
        Self::build(source, false)
    }

    /// Compile for whole-value matching (rule field matchers).
    pub fn whole(source: &str) -> Result<Self, PatternError> {
        Self::build(source, true)
    }

    fn build(source: &str, anchored: bool) -> Result<Self, PatternError> {
        let body = translate(source)?;
        let text = if anchored { format!("^(?:{body})$") } else { body };
        let regex = Regex::new(&text).map_err(|e| PatternError::Compile {
            pattern: source.to_string(),
            reason: e.to_string(),
        })?;
        Ok(Self { source: source.to_string(), regex })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn group_count(&self) -> usize {
        self.regex.captures_len() - 1
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.regex.is_match(text)
    }

    /// Capture groups of the leftmost match, in order.
    pub fn captures(&self, text: &str) -> Option<Vec<String>> {
        self.regex.captures(text).map(|caps| {
            caps.iter()
                .skip(1)
                .map(|m| m.map(|m| m.as_str().to_string()).unwrap_or_default())
                .collect()
        })
    }
}
