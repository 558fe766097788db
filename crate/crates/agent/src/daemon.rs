//! The agent's owner loop: converge runtimes onto the flag file, run plugins
//! on their intervals, dispatch their output, and drive the monitors.
//!
//! Nothing here reads the wall clock; [`Daemon::tick`] is handed the time,
//! so the same code runs live or under a harness-owned virtual clock.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDateTime;
use serde::Serialize;
use soc_core::clock::Clock;
use soc_core::engine::syslog::{envelope, format_syslog_line, AGENTD_PLUGIN};
use soc_core::package::{self, PackageSize};
use soc_core::process::Finished;
use soc_core::wire::{flag_file_json, ActiveResponseRequest, FlagEntry};
use soc_core::PluginId;

use crate::client::ManagerApi;
use crate::config::AgentConfig;
use crate::executor::{PluginExecutor, RunHandle, RunSpec};
use crate::monitor::{FimScanner, Monitor, Origin, Tailer};
use crate::output::parse_plugin_output;
use crate::shipper::LogSink;

pub struct Collaborators {
    pub api: Arc<dyn ManagerApi>,
    pub sink: Arc<dyn LogSink>,
    pub executor: Arc<dyn PluginExecutor>,
    pub clock: Arc<dyn Clock>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum DaemonEvent {
    FlagFileRead { at: NaiveDateTime, entries: usize },
    PollFailed { at: NaiveDateTime, error: String },
    Fetched { at: NaiveDateTime, plugin: PluginId, version: String },
    FetchFailed { at: NaiveDateTime, plugin: PluginId, error: String },
    Quarantined { at: NaiveDateTime, plugin: PluginId, version: String, reason: String },
    Started { at: NaiveDateTime, plugin: PluginId, version: String },
    Completed { at: NaiveDateTime, plugin: PluginId, logs: usize, ar_requests: usize, ignored: usize },
    RunFailed { at: NaiveDateTime, plugin: PluginId, reason: String },
    TimedOut { at: NaiveDateTime, plugin: PluginId },
    Replaced { at: NaiveDateTime, plugin: PluginId, old: String, new: String },
    Removed { at: NaiveDateTime, plugin: PluginId },
    ActiveResponse { at: NaiveDateTime, plugin: PluginId, args: Vec<String>, delivered: bool, attempts: u32, error: Option<String> },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DaemonStats {
    pub polls: u64,
    pub poll_failures: u64,
    pub fetches: u64,
    pub fetch_failures: u64,
    pub quarantined: u64,
    pub runs_started: u64,
    pub runs_ok: u64,
    pub runs_failed: u64,
    pub timeouts: u64,
    pub terminations: u64,
    pub logs_shipped: u64,
    pub ignored_lines: u64,
    pub ar_delivered: u64,
    pub ar_failed: u64,
}

struct InFlight {
    handle: Box<dyn RunHandle>,
    started: NaiveDateTime,
}

struct Runtime {
    version: String,
    name: String,
    interval: u32,
    dir: PathBuf,
    run: Option<InFlight>,
    next_run: NaiveDateTime,
    failures: u32,
    runs: u64,
}

impl Runtime {
    fn timeout(&self) -> chrono::Duration {
        chrono::Duration::milliseconds(self.interval as i64 * 900)
    }

    fn interval(&self) -> chrono::Duration {
        chrono::Duration::seconds(self.interval as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuntimeView {
    pub plugin: PluginId,
    pub version: String,
    pub name: String,
    pub interval: u32,
    pub running: bool,
    pub next_run: NaiveDateTime,
    pub failures: u32,
    pub runs: u64,
}

struct Scheduled {
    monitor: Box<dyn Monitor>,
    due: Option<NaiveDateTime>,
}

pub struct Daemon {
    config: AgentConfig,
    api: Arc<dyn ManagerApi>,
    sink: Arc<dyn LogSink>,
    executor: Arc<dyn PluginExecutor>,
    clock: Arc<dyn Clock>,
    origin: Origin,
    runtimes: BTreeMap<PluginId, Runtime>,
    quarantine: BTreeSet<(PluginId, String)>,
    next_poll: Option<NaiveDateTime>,
    monitors: Vec<Scheduled>,
    stats: DaemonStats,
    events: Vec<DaemonEvent>,
    observer: Option<Box<dyn FnMut(&DaemonEvent) + Send>>,
}

impl Daemon {
    pub fn new(config: AgentConfig, parts: Collaborators) -> std::io::Result<Self> {
        fs::create_dir_all(config.shared_dir())?;
        fs::create_dir_all(config.download_dir())?;
        let origin = Origin { hostname: config.hostname(), username: config.username() };
        let mut monitors: Vec<Scheduled> = config
            .tail
            .iter()
            .map(|spec| Scheduled { monitor: Box::new(Tailer::new(spec.clone(), origin.clone())), due: None })
            .collect();
        if !config.fim.is_empty() {
            let fim = FimScanner::new(config.fim.clone(), Duration::from_secs(config.fim_interval), origin.clone());
            monitors.push(Scheduled { monitor: Box::new(fim), due: None });
        }
        // Leftovers from a previous life are not trusted.
        if let Ok(entries) = fs::read_dir(config.download_dir()) {
            for entry in entries.flatten() {
                let _ = fs::remove_dir_all(entry.path());
            }
        }
        Ok(Self {
            api: parts.api,
            sink: parts.sink,
            executor: parts.executor,
            clock: parts.clock,
            origin,
            runtimes: BTreeMap::new(),
            quarantine: BTreeSet::new(),
            next_poll: None,
            monitors,
            stats: DaemonStats::default(),
            events: Vec::new(),
            observer: None,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn stats(&self) -> &DaemonStats {
        &self.stats
    }

    pub fn events(&self) -> &[DaemonEvent] {
        &self.events
    }

    /// Called with every event as it happens.
    pub fn set_observer(&mut self, observer: impl FnMut(&DaemonEvent) + Send + 'static) {
        self.observer = Some(Box::new(observer));
    }

    fn record(&mut self, event: DaemonEvent) {
        if let Some(observe) = self.observer.as_mut() {
            observe(&event);
        }
        self.events.push(event);
    }

    pub fn take_events(&mut self) -> Vec<DaemonEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn runtimes(&self) -> Vec<RuntimeView> {
        self.runtimes
            .iter()
            .map(|(id, rt)| RuntimeView {
                plugin: id.clone(),
                version: rt.version.clone(),
                name: rt.name.clone(),
                interval: rt.interval,
                running: rt.run.is_some(),
                next_run: rt.next_run,
                failures: rt.failures,
                runs: rt.runs,
            })
            .collect()
    }

    pub fn quarantined(&self) -> Vec<(PluginId, String)> {
        self.quarantine.iter().cloned().collect()
    }

    /// Advance the loop to `now`.
    pub fn tick(&mut self, now: NaiveDateTime) {
        if self.next_poll.is_none_or(|due| now >= due) {
            self.sync(now);
            self.next_poll = Some(now + chrono::Duration::seconds(self.config.poll_interval as i64));
        }
        let ids: Vec<PluginId> = self.runtimes.keys().cloned().collect();
        for id in ids {
            self.service(&id, now);
        }
        for i in 0..self.monitors.len() {
            let scheduled = &mut self.monitors[i];
            if scheduled.due.is_none_or(|due| now >= due) {
                let lines = scheduled.monitor.poll(now);
                let period = chrono::Duration::from_std(scheduled.monitor.period()).unwrap_or(chrono::Duration::seconds(1));
                scheduled.due = Some(now + period);
                for line in lines {
                    self.sink.ship(&line);
                    self.stats.logs_shipped += 1;
                }
            }
        }
    }

    /// Wait (in real time, up to `limit` per run) for in-flight runs to end,
    /// then dispatch their results as of `now`.
    pub fn settle(&mut self, now: NaiveDateTime, limit: Duration) {
        let ids: Vec<PluginId> = self.runtimes.iter().filter(|(_, rt)| rt.run.is_some()).map(|(id, _)| id.clone()).collect();
        for id in ids {
            let rt = self.runtimes.get_mut(&id).expect("listed");
            let outcome = rt.run.as_mut().expect("in flight").handle.wait_for(limit);
            match outcome {
                Ok(Some(done)) => {
                    rt.run = None;
                    self.complete(&id, done, now);
                }
                Ok(None) => {}
                Err(e) => {
                    rt.run = None;
                    self.fail(&id, now, format!("cannot wait for run: {e}"));
                }
            }
        }
    }

    /// Time of the earliest pending deadline, for callers stepping a virtual clock.
    pub fn next_deadline(&self) -> Option<NaiveDateTime> {
        let runs = self.runtimes.values().map(|rt| match &rt.run {
            Some(run) => run.started + rt.timeout(),
            None => rt.next_run,
        });
        let monitors = self.monitors.iter().filter_map(|m| m.due);
        runs.chain(monitors).chain(self.next_poll).min()
    }

    pub fn shutdown(&mut self) {
        let now = self.clock.now();
        let ids: Vec<PluginId> = self.runtimes.keys().cloned().collect();
        for id in ids {
            self.stop_runtime(&id, now);
        }
    }

    fn diagnostic(&mut self, now: NaiveDateTime, message: &str) {
        log::warn!("{message}");
        let line = format_syslog_line(now, &self.origin.hostname, &self.origin.username, &envelope(AGENTD_PLUGIN, message));
        self.sink.ship(&line);
    }

    // ---- convergence -----------------------------------------------------

    fn sync(&mut self, now: NaiveDateTime) {
        self.stats.polls += 1;
        let entries = match self.api.flag_file(&self.config.agent_id) {
            Ok(entries) => entries,
            Err(e) => {
                self.stats.poll_failures += 1;
                log::warn!("flag file poll failed: {e}");
                self.record(DaemonEvent::PollFailed { at: now, error: e.to_string() });
                return;
            }
        };
        if let Err(e) = write_replacing(&self.config.local_flag_file(), flag_file_json(&entries).as_bytes()) {
            log::warn!("cannot write local flag file: {e}");
        }
        self.record(DaemonEvent::FlagFileRead { at: now, entries: entries.len() });
        let desired: BTreeMap<PluginId, String> = entries.into_iter().map(|FlagEntry { id, version }| (id, version)).collect();

        let stale: Vec<PluginId> = self.runtimes.keys().filter(|id| !desired.contains_key(*id)).cloned().collect();
        for id in stale {
            self.stop_runtime(&id, now);
            let _ = fs::remove_dir_all(self.config.download_dir().join(id.as_str()));
            self.record(DaemonEvent::Removed { at: now, plugin: id });
        }
        for (id, version) in desired {
            if let Some(rt) = self.runtimes.get(&id) {
                if rt.version == version {
                    continue;
                }
                let old = rt.version.clone();
                self.stop_runtime(&id, now);
                self.record(DaemonEvent::Replaced { at: now, plugin: id.clone(), old, new: version.clone() });
            }
            if self.quarantine.contains(&(id.clone(), version.clone())) {
                continue;
            }
            self.install(&id, &version, now);
        }
    }

    fn stop_runtime(&mut self, id: &PluginId, now: NaiveDateTime) {
        if let Some(mut rt) = self.runtimes.remove(id) {
            if let Some(mut run) = rt.run.take() {
                let _ = run.handle.terminate();
                self.stats.terminations += 1;
                log::info!("terminated {id} at {now}");
            }
        }
    }

    fn install(&mut self, id: &PluginId, version: &str, now: NaiveDateTime) {
        self.stats.fetches += 1;
        let archive = match self.api.fetch_minimal(id) {
            Ok(bytes) => bytes,
            Err(e) => {
                self.stats.fetch_failures += 1;
                log::warn!("download of {id} failed: {e}");
                self.record(DaemonEvent::FetchFailed { at: now, plugin: id.clone(), error: e.to_string() });
                return;
            }
        };
        let checked = package::validate_package(&archive).map_err(|e| e.to_string()).and_then(|pkg| {
            if pkg.size() != PackageSize::Minimal {
                Err("expected a minimal package".to_string())
            } else if &pkg.metadata.id != id {
                Err(format!("archive holds plugin {}", pkg.metadata.id))
            } else {
                Ok(pkg)
            }
        });
        let pkg = match checked {
            Ok(pkg) => pkg,
            Err(reason) => {
                self.stats.quarantined += 1;
                self.quarantine.insert((id.clone(), version.to_string()));
                self.diagnostic(now, &format!("plugin {id} version {version} quarantined: {reason}"));
                self.record(DaemonEvent::Quarantined { at: now, plugin: id.clone(), version: version.into(), reason });
                return;
            }
        };
        let dir = self.config.download_dir().join(id.as_str());
        if let Err(e) = unpack(&self.config.download_dir(), id, &pkg) {
            self.stats.fetch_failures += 1;
            log::warn!("cannot unpack {id}: {e}");
            self.record(DaemonEvent::FetchFailed { at: now, plugin: id.clone(), error: e.to_string() });
            return;
        }
        self.record(DaemonEvent::Fetched { at: now, plugin: id.clone(), version: version.into() });
        self.runtimes.insert(
            id.clone(),
            Runtime {
                version: version.to_string(),
                name: soc_core::engine::syslog::syslog_token(&pkg.metadata.name),
                interval: pkg.metadata.interval,
                dir,
                run: None,
                next_run: now,
                failures: 0,
                runs: 0,
            },
        );
    }

    // ---- execution -----------------------------------------------------------

    fn service(&mut self, id: &PluginId, now: NaiveDateTime) {
        let rt = self.runtimes.get_mut(id).expect("present");
        let timeout = rt.timeout();
        if let Some(run) = rt.run.as_mut() {
            match run.handle.try_finish() {
                Ok(Some(done)) => {
                    rt.run = None;
                    self.complete(id, done, now);
                }
                Ok(None) if now - run.started >= timeout => {
                    let _ = run.handle.terminate();
                    rt.run = None;
                    self.stats.timeouts += 1;
                    self.stats.terminations += 1;
                    self.record(DaemonEvent::TimedOut { at: now, plugin: id.clone() });
                    self.fail(id, now, "run exceeded its time limit".into());
                }
                Ok(None) => return,
                Err(e) => {
                    rt.run = None;
                    self.fail(id, now, format!("cannot poll run: {e}"));
                }
            }
        }
        let rt = self.runtimes.get_mut(id).expect("present");
        if rt.run.is_some() || now < rt.next_run {
            return;
        }
        let spec = RunSpec {
            plugin: id.clone(),
            version: rt.version.clone(),
            script: rt.dir.join(package::SCRIPT),
            dir: rt.dir.clone(),
            env: vec![
                ("SOC_AGENT_ID".into(), self.config.agent_id.to_string()),
                ("SOC_PLUGIN_ID".into(), id.to_string()),
                ("SOC_OSSEC_DIR".into(), self.config.ossec_dir.display().to_string()),
            ],
        };
        match self.executor.start(&spec) {
            Ok(handle) => {
                rt.run = Some(InFlight { handle, started: now });
                rt.runs += 1;
                self.stats.runs_started += 1;
                self.record(DaemonEvent::Started { at: now, plugin: id.clone(), version: spec.version });
            }
            Err(e) => self.fail(id, now, format!("cannot start: {e}")),
        }
    }

    fn fail(&mut self, id: &PluginId, now: NaiveDateTime, reason: String) {
        self.stats.runs_failed += 1;
        if let Some(rt) = self.runtimes.get_mut(id) {
            rt.failures += 1;
            rt.next_run = now + rt.interval();
            let name = rt.name.clone();
            self.diagnostic(now, &format!("plugin {name} ({id}) failed: {reason}"));
        }
        self.record(DaemonEvent::RunFailed { at: now, plugin: id.clone(), reason });
    }

    fn complete(&mut self, id: &PluginId, done: Finished, now: NaiveDateTime) {
        if !done.success() {
            let reason = match (done.code, done.signal) {
                (Some(code), _) => format!("exit code {code}"),
                (None, Some(sig)) => format!("killed by signal {sig}"),
                _ => "unknown exit".into(),
            };
            self.fail(id, now, reason);
            return;
        }
        let rt = self.runtimes.get_mut(id).expect("present");
        rt.failures = 0;
        rt.next_run = now + rt.interval();
        let name = rt.name.clone();
        let out = parse_plugin_output(&done.stdout);
        self.stats.runs_ok += 1;
        self.record(DaemonEvent::Completed {
            at: now,
            plugin: id.clone(),
            logs: out.logs.len(),
            ar_requests: out.ar_requests.len(),
            ignored: out.ignored_count(),
        });
        for message in &out.logs {
            let line = format_syslog_line(now, &self.origin.hostname, &self.origin.username, &envelope(&name, message));
            self.sink.ship(&line);
            self.stats.logs_shipped += 1;
        }
        self.stats.ignored_lines += out.ignored_count() as u64;
        for line in &out.ignored {
            log::debug!("plugin {name} printed an unrecognised line: {line}");
        }
        for args in out.ar_requests {
            self.send_active_response(id, args, now);
        }
    }

    fn send_active_response(&mut self, id: &PluginId, args: Vec<String>, now: NaiveDateTime) {
        let request = ActiveResponseRequest { agent_id: self.config.agent_id.clone(), args: args.clone(), timestamp: now };
        let attempts_allowed = self.config.ar_attempts.max(1);
        let mut attempts = 0;
        let mut backoff = Duration::from_millis(self.config.ar_backoff_ms);
        let result = loop {
            attempts += 1;
            match self.api.active_response(id, &request) {
                Ok(()) => break Ok(()),
                Err(e) if e.retryable() && attempts < attempts_allowed => {
                    log::info!("active response for {id} failed ({e}), retrying");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
                Err(e) => break Err(e),
            }
        };
        let error = result.as_ref().err().map(|e| e.to_string());
        match &result {
            Ok(()) => self.stats.ar_delivered += 1,
            Err(_) => self.stats.ar_failed += 1,
        }
        let record = serde_json::json!({
            "at": now.format("%Y-%m-%dT%H:%M:%S").to_string(),
            "plugin": id.as_str(),
            "args": args,
            "delivered": result.is_ok(),
            "attempts": attempts,
            "error": error,
        });
        append_line(&self.config.ar_log(), &record.to_string());
        if let Err(e) = &result {
            if e.retryable() {
                append_line(&self.config.ar_dead_letters(), &record.to_string());
            }
        }
        self.record(DaemonEvent::ActiveResponse { at: now, plugin: id.clone(), args, delivered: result.is_ok(), attempts, error });
    }
}

fn append_line(path: &std::path::Path, line: &str) {
    let written = fs::OpenOptions::new().create(true).append(true).open(path).and_then(|mut f| writeln!(f, "{line}"));
    if let Err(e) = written {
        log::warn!("cannot append to {}: {e}", path.display());
    }
}

fn write_replacing(path: &std::path::Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

/// Unpack into a staging directory, then swap it into place.
fn unpack(root: &std::path::Path, id: &PluginId, pkg: &package::PluginPackage) -> std::io::Result<()> {
    let staging = root.join(format!(".{id}.staging"));
    let _ = fs::remove_dir_all(&staging);
    fs::create_dir_all(&staging)?;
    for (name, contents) in pkg.restricted(PackageSize::Minimal).members() {
        fs::write(staging.join(name), contents)?;
    }
    let target = root.join(id.as_str());
    let _ = fs::remove_dir_all(&target);
    fs::rename(&staging, &target)
}
