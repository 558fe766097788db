//! The line protocol plugins speak on standard output.

use soc_core::wire::is_ar_token;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PluginOutput {
    /// `LOG: ` payloads, in order.
    pub logs: Vec<String>,
    /// `ARY: ` argument lists, in order.
    pub ar_requests: Vec<Vec<String>>,
    /// `ARN: ` lines.
    pub reserved: usize,
    /// Nonempty lines that are none of the above.
    pub ignored: Vec<String>,
}

impl PluginOutput {
    pub fn ignored_count(&self) -> usize {
        self.reserved + self.ignored.len()
    }
}

/// Never fails: every nonempty line is a log, an AR request, reserved or ignored.
pub fn parse_plugin_output(text: &str) -> PluginOutput {
    let mut out = PluginOutput::default();
    for line in text.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        if let Some(message) = line.strip_prefix("LOG: ") {
            out.logs.push(message.to_string());
        } else if let Some(args) = line.strip_prefix("ARY: ") {
            let args: Vec<String> = args.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect();
            debug_assert!(args.iter().all(|a| is_ar_token(a)));
            out.ar_requests.push(args);
        } else if line.starts_with("ARN: ") {
            out.reserved += 1;
        } else {
            out.ignored.push(line.to_string());
        }
    }
    out
}
