//! The Syslog line format spoken between agents and the manager:
//!
//! ```text
//! MON DAY HH:MM:SS HOSTNAME USERNAME: MESSAGE
//! ```
//!
//! Plugin output travels inside the message as `SOC_NES: PLUGIN_NAME: MSG`.

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::AgentId;

/// Marker that opens every message produced by the plugin system.
pub const ENVELOPE_MARKER: &str = "SOC_NES";

/// Plugin name used for lines produced by the built-in log tailer.
pub const LOGTAIL_PLUGIN: &str = "logtail";
/// Plugin name used for file-integrity events.
pub const FIM_PLUGIN: &str = "syscheck";
/// Plugin name for agent daemon diagnostics.
pub const AGENTD_PLUGIN: &str = "agentd";

const MONTHS: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogSource {
    PluginShipper,
    TailedFile,
    Fim,
    External,
}

impl LogSource {
    /// Classify a line received over an agent's ingest connection.
    pub fn of_agent_message(message: &str) -> Self {
        match envelope_plugin(message) {
            Some(FIM_PLUGIN) => Self::Fim,
            Some(LOGTAIL_PLUGIN) | None => Self::TailedFile,
            Some(_) => Self::PluginShipper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvent {
    pub timestamp: NaiveDateTime,
    pub hostname: String,
    pub username: String,
    pub message: String,
    pub raw: String,
    pub agent_id: AgentId,
    pub source: LogSource,
}

/// A line that did not follow the Syslog layout. `event` carries the raw line
/// as its message so it can still be decoded.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unparsable syslog line: {reason}")]
pub struct UnparsableLine {
    pub reason: &'static str,
    pub event: LogEvent,
}

/// Split a Syslog line into its parts. The year comes from `ingest_time`,
/// which also stamps lines that fail to parse.
pub fn parse_syslog_line(
    line: &str,
    agent_id: &AgentId,
    source: LogSource,
    ingest_time: NaiveDateTime,
) -> Result<LogEvent, UnparsableLine> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    split_line(line, ingest_time.year())
        .map(|(timestamp, hostname, username, message)| LogEvent {
            timestamp,
            hostname: hostname.to_string(),
            username: username.to_string(),
            message: message.to_string(),
            raw: line.to_string(),
            agent_id: agent_id.clone(),
            source,
        })
        .map_err(|reason| UnparsableLine {
            reason,
            event: LogEvent {
                timestamp: ingest_time,
                hostname: String::new(),
                username: String::new(),
                message: line.to_string(),
                raw: line.to_string(),
                agent_id: agent_id.clone(),
                source,
            },
        })
}

fn split_line(line: &str, year: i32) -> Result<(NaiveDateTime, &str, &str, &str), &'static str> {
    let month = line.get(..3).ok_or("line too short")?;
    let month = MONTHS.iter().position(|m| *m == month).ok_or("unknown month")? as u32 + 1;
    let rest = line[3..].strip_prefix(' ').ok_or("expected space after month")?;
    // RFC 3164 pads single-digit days with a second space.
    let rest = rest.strip_prefix(' ').unwrap_or(rest);

    let (day, rest) = rest.split_once(' ').ok_or("missing day")?;
    if day.is_empty() || day.len() > 2 || !day.bytes().all(|b| b.is_ascii_digit()) {
        return Err("bad day");
    }
    let day: u32 = day.parse().map_err(|_| "bad day")?;

    let (clock, rest) = rest.split_once(' ').ok_or("missing time")?;
    let clock = clock.as_bytes();
    let two = |i: usize| -> Result<u32, &'static str> {
        let (a, b) = (clock[i], clock[i + 1]);
        if a.is_ascii_digit() && b.is_ascii_digit() {
            Ok(u32::from(a - b'0') * 10 + u32::from(b - b'0'))
        } else {
            Err("bad time")
        }
    };
    if clock.len() != 8 || clock[2] != b':' || clock[5] != b':' {
        return Err("bad time");
    }
    let (h, m, s) = (two(0)?, two(3)?, two(6)?);

    let (hostname, rest) = rest.split_once(' ').ok_or("missing username")?;
    if hostname.is_empty() {
        return Err("empty hostname");
    }
    let (user_token, message) = match rest.split_once(' ') {
        Some((token, message)) => (token, message),
        None => (rest, ""),
    };
    let username = user_token.strip_suffix(':').ok_or("username must end with ':'")?;
    if username.is_empty() {
        return Err("empty username");
    }

    let timestamp = NaiveDate::from_ymd_opt(year, month, day)
        .and_then(|d| d.and_hms_opt(h, m, s))
        .ok_or("no such calendar time")?;
    Ok((timestamp, hostname, username, message))
}

/// Render a Syslog line. `hostname` and `username` must be non-empty tokens
/// without whitespace; see [`syslog_token`].
pub fn format_syslog_line(timestamp: NaiveDateTime, hostname: &str, username: &str, message: &str) -> String {
    format!(
        "{} {} {:02}:{:02}:{:02} {hostname} {username}: {message}",
        MONTHS[timestamp.month0() as usize],
        timestamp.day(),
        timestamp.hour(),
        timestamp.minute(),
        timestamp.second(),
    )
}

/// Make an arbitrary host or user name usable as a single Syslog token.
pub fn syslog_token(raw: &str) -> String {
    let token: String = raw
        .trim()
        .chars()
        .map(|c| if c.is_whitespace() { '-' } else { c })
        .collect();
    if token.is_empty() {
        "unknown".into()
    } else {
        token
    }
}

/// `SOC_NES: PLUGIN_NAME: MSG`
pub fn envelope(plugin_name: &str, message: &str) -> String {
    format!("{ENVELOPE_MARKER}: {plugin_name}: {message}")
}

/// Plugin name of an enveloped message, if it is one.
pub fn envelope_plugin(message: &str) -> Option<&str> {
    let start = message.find("SOC_NES: ")? + "SOC_NES: ".len();
    let rest = &message[start..];
    rest.find(": ").map(|end| &rest[..end])
}

/// Split an enveloped message into plugin name and payload.
pub fn open_envelope(message: &str) -> Option<(&str, &str)> {
    let rest = message.strip_prefix("SOC_NES: ")?;
    rest.split_once(": ")
}

/// True if `line` already follows the Syslog layout.
pub fn is_syslog_line(line: &str) -> bool {
    split_line(line, 2000).is_ok()
}
