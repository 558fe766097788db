//! Built-in monitors: a rotation-aware file tailer and a hash-baseline FIM
//! scanner. Each produces ready-to-ship Syslog lines when polled.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom};
use std::os::unix::fs::MetadataExt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::NaiveDateTime;
use sha2::{Digest, Sha256};
use soc_core::engine::syslog::{envelope, format_syslog_line, is_syslog_line, FIM_PLUGIN, LOGTAIL_PLUGIN};

use crate::config::{TailFormat, TailSpec};

pub trait Monitor: Send {
    fn name(&self) -> String;
    fn period(&self) -> Duration;
    fn poll(&mut self, now: NaiveDateTime) -> Vec<String>;
}

#[derive(Debug, Clone)]
pub struct Origin {
    pub hostname: String,
    pub username: String,
}

impl Origin {
    fn line(&self, now: NaiveDateTime, plugin: &str, message: &str) -> String {
        format_syslog_line(now, &self.hostname, &self.username, &envelope(plugin, message))
    }
}

struct Open {
    file: File,
    identity: (u64, u64),
    pos: u64,
}

pub struct Tailer {
    spec: TailSpec,
    origin: Origin,
    open: Option<Open>,
    partial: Vec<u8>,
    first_poll: bool,
}

impl Tailer {
    pub fn new(spec: TailSpec, origin: Origin) -> Self {
        Self { spec, origin, open: None, partial: Vec::new(), first_poll: true }
    }

    fn drain(open: &mut Open, partial: &mut Vec<u8>) -> Vec<String> {
        let mut buf = Vec::new();
        if open.file.seek(SeekFrom::Start(open.pos)).is_ok() {
            if let Ok(n) = open.file.read_to_end(&mut buf) {
                open.pos += n as u64;
            }
        }
        partial.extend_from_slice(&buf);
        let mut lines = Vec::new();
        while let Some(i) = partial.iter().position(|b| *b == b'\n') {
            let raw: Vec<u8> = partial.drain(..=i).collect();
            let text = String::from_utf8_lossy(&raw[..raw.len() - 1]).trim_end_matches('\r').to_string();
            if !text.is_empty() {
                lines.push(text);
            }
        }
        lines
    }

    fn render(&self, now: NaiveDateTime, line: String) -> String {
        match self.spec.format {
            TailFormat::Syslog if is_syslog_line(&line) => line,
            _ => self.origin.line(now, LOGTAIL_PLUGIN, &line),
        }
    }
}

impl Monitor for Tailer {
    fn name(&self) -> String {
        format!("tail {}", self.spec.path.display())
    }

    fn period(&self) -> Duration {
        Duration::from_secs(1)
    }

    fn poll(&mut self, now: NaiveDateTime) -> Vec<String> {
        let first = std::mem::replace(&mut self.first_poll, false);
        let mut raw = Vec::new();
        let meta = match fs::metadata(&self.spec.path) {
            Ok(m) => m,
            Err(_) => {
                // Gone (rotation in progress or not created yet): finish the old handle.
                if let Some(open) = self.open.as_mut() {
                    raw.extend(Self::drain(open, &mut self.partial));
                }
                self.open = None;
                return raw.into_iter().map(|l| self.render(now, l)).collect();
            }
        };
        let identity = (meta.dev(), meta.ino());
        if self.open.as_ref().is_some_and(|o| o.identity != identity) {
            let mut old = self.open.take().expect("checked");
            raw.extend(Self::drain(&mut old, &mut self.partial));
            self.partial.clear();
        }
        if self.open.is_none() {
            match File::open(&self.spec.path) {
                Ok(file) => {
                    let pos = if first { meta.len() } else { 0 };
                    self.open = Some(Open { file, identity, pos });
                }
                Err(e) => {
                    log::warn!("cannot open {}: {e}", self.spec.path.display());
                    return raw.into_iter().map(|l| self.render(now, l)).collect();
                }
            }
        }
        let open = self.open.as_mut().expect("opened");
        if meta.len() < open.pos {
            // Truncated in place.
            open.pos = 0;
            self.partial.clear();
        }
        raw.extend(Self::drain(open, &mut self.partial));
        raw.into_iter().map(|l| self.render(now, l)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FimChange {
    Added,
    Modified,
    Deleted,
}

impl FimChange {
    pub fn verb(self) -> &'static str {
        match self {
            Self::Added => "added",
            Self::Modified => "modified",
            Self::Deleted => "deleted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FimEvent {
    pub change: FimChange,
    pub path: PathBuf,
    pub sha256: Option<String>,
}

impl FimEvent {
    /// `File '<path>' added|modified sha256=<hex>` or `File '<path>' deleted`.
    pub fn message(&self) -> String {
        match &self.sha256 {
            Some(sha) => format!("File '{}' {} sha256={sha}", self.path.display(), self.change.verb()),
            None => format!("File '{}' {}", self.path.display(), self.change.verb()),
        }
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Content-hash baseline over every regular file below the watched roots.
/// The first scan only records the baseline.
pub struct FimScanner {
    roots: Vec<PathBuf>,
    period: Duration,
    origin: Origin,
    baseline: Option<BTreeMap<PathBuf, String>>,
}

impl FimScanner {
    pub fn new(roots: Vec<PathBuf>, period: Duration, origin: Origin) -> Self {
        Self { roots, period, origin, baseline: None }
    }

    fn snapshot(&self, previous: Option<&BTreeMap<PathBuf, String>>) -> BTreeMap<PathBuf, String> {
        let mut seen = BTreeMap::new();
        for root in &self.roots {
            for entry in walkdir::WalkDir::new(root).follow_links(false).into_iter() {
                let entry = match entry {
                    Ok(e) => e,
                    Err(e) => {
                        log::debug!("fim: {e}");
                        continue;
                    }
                };
                if !entry.file_type().is_file() {
                    continue;
                }
                match sha256_file(entry.path()) {
                    Ok(sha) => {
                        seen.insert(entry.path().to_path_buf(), sha);
                    }
                    Err(e) => {
                        log::warn!("fim: cannot read {}: {e}", entry.path().display());
                        // Unreadable is not deleted: keep the old hash.
                        if let Some(old) = previous.and_then(|p| p.get(entry.path())) {
                            seen.insert(entry.path().to_path_buf(), old.clone());
                        }
                    }
                }
            }
        }
        seen
    }

    /// Changes since the previous scan, ordered by path.
    pub fn scan(&mut self) -> Vec<FimEvent> {
        let current = self.snapshot(self.baseline.as_ref());
        let Some(previous) = self.baseline.replace(current.clone()) else { return Vec::new() };
        let mut events = Vec::new();
        let mut paths: Vec<&PathBuf> = previous.keys().chain(current.keys()).collect();
        paths.sort();
        paths.dedup();
        for path in paths {
            let (change, sha) = match (previous.get(path), current.get(path)) {
                (None, Some(new)) => (FimChange::Added, Some(new.clone())),
                (Some(old), Some(new)) if old != new => (FimChange::Modified, Some(new.clone())),
                (Some(_), None) => (FimChange::Deleted, None),
                _ => continue,
            };
            events.push(FimEvent { change, path: path.clone(), sha256: sha });
        }
        events
    }
}

impl Monitor for FimScanner {
    fn name(&self) -> String {
        "fim".into()
    }

    fn period(&self) -> Duration {
        self.period
    }

    fn poll(&mut self, now: NaiveDateTime) -> Vec<String> {
        self.scan().iter().map(|e| self.origin.line(now, FIM_PLUGIN, &e.message())).collect()
    }
}
