//! In-process simulation: one manager and a handful of agents stepped on a
//! shared virtual clock, second by second.
//!
//! Agents talk to the manager through direct calls instead of HTTP and ship
//! their lines straight into `ingest_line`, so a run is deterministic apart
//! from alert ids. Plugin scripts and active responses still run as real
//! interpreter processes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{NaiveDate, NaiveDateTime};
use serde::Serialize;
use soc_agent::client::{ApiFailure, ManagerApi};
use soc_agent::config::{TailFormat, TailSpec};
use soc_agent::executor::ProcessExecutor;
use soc_agent::shipper::LogSink;
use soc_agent::{AgentConfig, Collaborators, Daemon, DaemonEvent};
use soc_autoconfig::vault::{vault_encrypt_with, KdfParams};
use soc_autoconfig::{execute_plan, formatter, parse_topology, plan_deployment, vault_decrypt, Integrations, PlanOptions, SshStub};
use soc_core::clock::{Clock, VirtualClock};
use soc_core::package::{self, samples, PackageSize, PluginPackage};
use soc_core::wire::{ActiveResponseRequest, FlagFile};
use soc_core::{AgentId, PluginId, Version};
use soc_manager::reputation::MockReputation;
use soc_manager::tickets::WebhookTransport;
use soc_manager::{builtin, Manager, ManagerConfig, ManagerError, Services};

use crate::oracle::{AlertKey, Delivered, Documents, Oracle};
use crate::scenario::{Action, FileOp, PluginSource, Scenario};

const SETTLE_LIMIT: Duration = Duration::from_secs(20);
const WEBHOOK_URL: &str = "sim://webhook";

/// Where every simulated run starts.
pub fn epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2021, 1, 28).unwrap().and_hms_opt(18, 49, 1).unwrap()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Entry {
    /// Seconds since the start of the run.
    pub t: u64,
    pub actor: String,
    pub kind: String,
    pub detail: String,
}

impl Entry {
    pub fn render(&self) -> String {
        format!("t+{:<4} {:<10} {:<18} {}", self.t, self.actor, self.kind, self.detail)
    }
}

#[derive(Clone)]
struct Recorder {
    clock: VirtualClock,
    entries: Arc<Mutex<Vec<Entry>>>,
}

impl Recorder {
    fn t(&self) -> u64 {
        (self.clock.now() - epoch()).num_seconds().max(0) as u64
    }

    fn note(&self, actor: impl Into<String>, kind: &str, detail: impl Into<String>) {
        let entry = Entry { t: self.t(), actor: actor.into(), kind: kind.into(), detail: detail.into() };
        self.entries.lock().unwrap().push(entry);
    }
}

/// Ticket webhook that remembers what was posted.
#[derive(Default)]
pub struct RecordingWebhook {
    pub down: AtomicBool,
    pub bodies: Mutex<Vec<String>>,
}

impl WebhookTransport for RecordingWebhook {
    fn post(&self, _url: &str, body: &str) -> Result<(), String> {
        if self.down.load(Ordering::SeqCst) {
            return Err("ticketing endpoint unavailable".into());
        }
        self.bodies.lock().unwrap().push(body.to_string());
        Ok(())
    }
}

/// The harness's own view of which rule documents are live, kept from the
/// actions it performed rather than read back from the manager.
struct DocumentModel {
    plugins: BTreeMap<PluginId, (String, String, bool)>,
    current: Documents,
}

impl DocumentModel {
    fn new() -> Self {
        let mut m = Self { plugins: BTreeMap::new(), current: Arc::new(Vec::new()) };
        m.rebuild();
        m
    }

    fn rebuild(&mut self) {
        let mut docs = vec![(builtin::DECODERS.to_string(), builtin::RULES.to_string())];
        docs.extend(self.plugins.values().filter(|p| p.2).map(|(d, r, _)| (d.clone(), r.clone())));
        self.current = Arc::new(docs);
    }
}

/// One per agent, so requests can be attributed.
struct InProcessApi {
    agent: AgentId,
    manager: Arc<Manager>,
    rec: Recorder,
    seen: Mutex<Option<FlagFile>>,
}

fn rejected(e: ManagerError) -> ApiFailure {
    ApiFailure::Rejected { status: e.status(), kind: e.kind().to_string(), message: e.to_string() }
}

impl ManagerApi for InProcessApi {
    fn flag_file(&self, agent: &AgentId) -> Result<FlagFile, ApiFailure> {
        let entries = self.manager.flag_file(agent.as_str()).map_err(rejected)?;
        let mut seen = self.seen.lock().unwrap();
        if seen.as_ref() != Some(&entries) {
            let listed: Vec<String> = entries.iter().map(|e| format!("{}@{}", e.id, e.version)).collect();
            self.rec.note(agent_actor(agent), "flag_file_seen", format!("[{}]", listed.join(", ")));
            *seen = Some(entries.clone());
        }
        Ok(entries)
    }

    fn fetch_minimal(&self, id: &PluginId) -> Result<Vec<u8>, ApiFailure> {
        self.rec.note(agent_actor(&self.agent), "fetch_request", format!("{id} size=minimal"));
        let archive = self.manager.export_plugin(id.as_str(), PackageSize::Minimal).map_err(rejected)?;
        let members = package::member_names(&archive).unwrap_or_default();
        self.rec.note("manager", "archive_received", format!("{} members: {}", members.len(), members.join(", ")));
        Ok(archive)
    }

    fn active_response(&self, id: &PluginId, request: &ActiveResponseRequest) -> Result<(), ApiFailure> {
        self.rec.note(agent_actor(&request.agent_id), "ar_requested", format!("{id} {}", request.args.join(" ")));
        let record = self.manager.active_response(id.as_str(), request.clone()).map_err(rejected)?;
        self.rec.note("manager", "ar_executed", format!("{:?} exit {:?}", record.outcome, record.exit_code));
        Ok(())
    }
}

struct IngestSink {
    agent: AgentId,
    manager: Arc<Manager>,
    rec: Recorder,
    model: Arc<Mutex<DocumentModel>>,
    delivered: Arc<Mutex<Vec<Delivered>>>,
    ticketing: bool,
}

impl LogSink for IngestSink {
    fn ship(&self, line: &str) {
        self.rec.note(agent_actor(&self.agent), "log_shipped", line);
        let documents = self.model.lock().unwrap().current.clone();
        self.delivered.lock().unwrap().push(Delivered {
            at: self.rec.clock.now(),
            agent: self.agent.clone(),
            line: line.to_string(),
            documents,
        });
        let before = if self.ticketing { self.manager.tickets(None).len() } else { 0 };
        for a in self.manager.ingest_line(&self.agent, line) {
            self.rec.note("manager", "alert", format!("rule {} level {} agent {}: {}", a.rule_id, a.level, a.agent_id, a.description));
        }
        if self.ticketing {
            for t in self.manager.tickets(None).iter().skip(before) {
                self.rec.note("manager", "ticket_opened", format!("ticket {}", t.id));
            }
        }
    }
}

fn agent_actor(id: &AgentId) -> String {
    format!("agent {id}")
}

fn observe(rec: &Recorder, agent: &AgentId, event: &DaemonEvent) {
    let actor = agent_actor(agent);
    match event {
        DaemonEvent::Fetched { plugin, version, .. } => rec.note(actor, "unpacked", format!("{plugin}@{version}")),
        DaemonEvent::Started { plugin, version, .. } => rec.note(actor, "executed", format!("{plugin}@{version}")),
        DaemonEvent::Completed { plugin, logs, ar_requests, ignored, .. } => {
            rec.note(actor, "output_captured", format!("{plugin} logs={logs} ar={ar_requests} ignored={ignored}"))
        }
        DaemonEvent::Quarantined { plugin, version, reason, .. } => rec.note(actor, "quarantined", format!("{plugin}@{version}: {reason}")),
        DaemonEvent::TimedOut { plugin, .. } => rec.note(actor, "timed_out", plugin.to_string()),
        DaemonEvent::RunFailed { plugin, reason, .. } => rec.note(actor, "run_failed", format!("{plugin}: {reason}")),
        DaemonEvent::Removed { plugin, .. } => rec.note(actor, "removed", plugin.to_string()),
        DaemonEvent::Replaced { plugin, old, new, .. } => rec.note(actor, "replaced", format!("{plugin} {old} -> {new}")),
        DaemonEvent::FetchFailed { plugin, error, .. } => rec.note(actor, "fetch_failed", format!("{plugin}: {error}")),
        DaemonEvent::PollFailed { error, .. } => rec.note(actor, "poll_failed", error.clone()),
        DaemonEvent::FlagFileRead { .. } | DaemonEvent::ActiveResponse { .. } => {}
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check { name: name.into(), passed, detail: detail.into() }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub scenario: String,
    pub checks: Vec<Check>,
    pub transcript: Vec<Entry>,
    pub alerts: Vec<AlertKey>,
    /// The same alerts with their decoded fields.
    #[serde(skip)]
    pub raised: Vec<soc_core::engine::Alert>,
    pub ar_invocations: Vec<Vec<String>>,
    pub tickets: usize,
    pub closed_tickets: usize,
    pub webhook_deliveries: usize,
    pub plan: Vec<String>,
    pub wall_ms: u128,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let mark = if c.passed { "ok  " } else { "FAIL" };
            out.push_str(&format!("{mark} {:<22} {}\n", c.name, c.detail));
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        out.push_str(&format!("{}: {passed}/{} checks passed in {} ms\n", self.scenario, self.checks.len(), self.wall_ms));
        out
    }

    pub fn transcript_text(&self) -> String {
        self.transcript.iter().map(|e| e.render() + "\n").collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("cannot prepare the simulation: {0}")]
    Setup(String),
}

fn setup<E: std::fmt::Display>(what: &str) -> impl FnOnce(E) -> HarnessError + '_ {
    move |e| HarnessError::Setup(format!("{what}: {e}"))
}

struct SimAgent {
    id: AgentId,
    sandbox: PathBuf,
    daemon: Daemon,
}

struct Run<'s> {
    scenario: &'s Scenario,
    clock: VirtualClock,
    rec: Recorder,
    manager: Arc<Manager>,
    webhook: Arc<RecordingWebhook>,
    model: Arc<Mutex<DocumentModel>>,
    delivered: Arc<Mutex<Vec<Delivered>>>,
    agents: Vec<SimAgent>,
    action_errors: Vec<String>,
    plan: Vec<String>,
    pending_convergence: Vec<(u64, u64)>,
    last_mutation: Option<u64>,
    convergence: Vec<String>,
    convergence_checked: usize,
}

/// Run a scenario to completion and evaluate its expectations.
pub fn simulate(scenario: &Scenario) -> Result<Report, HarnessError> {
    let started = Instant::now();
    let root = tempfile::tempdir().map_err(setup("temporary directory"))?;
    let mut run = Run::start(scenario, root.path())?;
    for source in &scenario.plugins {
        if let Err(e) = run.import(source) {
            run.action_errors.push(format!("t+0 import: {e}"));
        }
    }
    let last = scenario.events.last().map_or(0, |e| e.at);
    let end = last + scenario.tail();
    let mut events = scenario.events.iter().peekable();
    for t in 0..=end {
        run.clock.set(epoch() + chrono::Duration::seconds(t as i64));
        while let Some(event) = events.next_if(|e| e.at == t) {
            if let Err(e) = run.apply(&event.action) {
                run.action_errors.push(format!("t+{t}: {e}"));
            }
        }
        run.step();
        run.check_convergence(t);
    }
    for a in &mut run.agents {
        a.daemon.shutdown();
    }
    run.manager.quiesce();
    let mut report = run.report();
    report.wall_ms = started.elapsed().as_millis();
    run.manager.shutdown();
    Ok(report)
}

impl<'s> Run<'s> {
    fn start(scenario: &'s Scenario, root: &Path) -> Result<Self, HarnessError> {
        let clock = VirtualClock::starting_at(epoch());
        let rec = Recorder { clock: clock.clone(), entries: Arc::new(Mutex::new(Vec::new())) };
        let ids = scenario
            .agents
            .iter()
            .map(|a| AgentId::parse(&a.id).map_err(setup("agent id")))
            .collect::<Result<Vec<_>, _>>()?;

        let setup_m = &scenario.manager;
        let webhook = Arc::new(RecordingWebhook::default());
        webhook.down.store(setup_m.webhook_down, Ordering::SeqCst);
        let config = ManagerConfig {
            data_root: root.join("manager"),
            ticket_webhook: setup_m.ticket_webhook.then(|| WEBHOOK_URL.to_string()),
            ticket_threshold: setup_m.ticket_threshold,
            webhook_attempts: 3,
            webhook_backoff_ms: 1,
            agents: ids.clone(),
            ..ManagerConfig::default()
        };
        let reputation = setup_m.reputation.as_ref().map(|r| {
            Box::new(MockReputation {
                total: r.total,
                verdicts: r.verdicts.iter().map(|(k, v)| (k.to_ascii_lowercase(), *v)).collect(),
                down: r.down,
            }) as Box<dyn soc_manager::reputation::ReputationBackend>
        });
        let services = Services { clock: Arc::new(clock.clone()), webhook: webhook.clone(), reputation };
        let manager = Manager::open_with(config, services).map_err(setup("manager"))?;

        let model = Arc::new(Mutex::new(DocumentModel::new()));
        let delivered = Arc::new(Mutex::new(Vec::new()));
        let mut agents = Vec::new();
        for (setup_a, id) in scenario.agents.iter().zip(ids) {
            let sandbox = root.join("agents").join(id.as_str());
            let within = |p: &String| sandbox.join(p.trim_start_matches('/'));
            for p in setup_a.tail.iter().chain(&setup_a.fim) {
                let path = within(p);
                let dir = if setup_a.fim.contains(p) { path.clone() } else { path.parent().unwrap_or(&sandbox).to_path_buf() };
                fs::create_dir_all(&dir).map_err(setup("agent sandbox"))?;
            }
            let config = AgentConfig {
                agent_id: id.clone(),
                ossec_dir: sandbox.join("ossec"),
                descriptor_dir: sandbox.join("sched"),
                poll_interval: scenario.poll(),
                tail: setup_a.tail.iter().map(|p| TailSpec { path: within(p), format: TailFormat::Syslog }).collect(),
                fim: setup_a.fim.iter().map(within).collect(),
                fim_interval: setup_a.fim_interval,
                ar_backoff_ms: 0,
                hostname: Some(format!("agent-{id}")),
                username: Some("root".into()),
                ..AgentConfig::default()
            };
            let sink = Arc::new(IngestSink {
                agent: id.clone(),
                manager: manager.clone(),
                rec: rec.clone(),
                model: model.clone(),
                delivered: delivered.clone(),
                ticketing: setup_m.ticket_webhook,
            });
            let api = InProcessApi { agent: id.clone(), manager: manager.clone(), rec: rec.clone(), seen: Mutex::new(None) };
            let parts = Collaborators {
                api: Arc::new(api),
                sink,
                executor: Arc::new(ProcessExecutor::new(config.interpreter())),
                clock: Arc::new(clock.clone()),
            };
            let mut daemon = Daemon::new(config, parts).map_err(setup("agent"))?;
            let (r, who) = (rec.clone(), id.clone());
            daemon.set_observer(move |e| observe(&r, &who, e));
            agents.push(SimAgent { id, sandbox, daemon });
        }
        Ok(Self {
            scenario,
            clock,
            rec,
            manager,
            webhook,
            model,
            delivered,
            agents,
            action_errors: Vec::new(),
            plan: Vec::new(),
            pending_convergence: Vec::new(),
            last_mutation: None,
            convergence: Vec::new(),
            convergence_checked: 0,
        })
    }

    fn step(&mut self) {
        let now = self.clock.now();
        for a in &mut self.agents {
            a.daemon.tick(now);
            a.daemon.settle(now, SETTLE_LIMIT);
        }
        self.manager.quiesce();
    }

    fn mutated(&mut self) {
        let t = self.rec.t();
        self.last_mutation = Some(t);
        self.pending_convergence.push((t + 2 * self.scenario.poll(), t));
    }

    /// Runtime sets must match the manager's flag files two polls after a
    /// change, apart from versions the agent has quarantined.
    fn check_convergence(&mut self, t: u64) {
        let due: Vec<(u64, u64)> = self.pending_convergence.iter().copied().filter(|(d, _)| *d == t).collect();
        self.pending_convergence.retain(|(d, _)| *d != t);
        for (_, at) in due {
            if self.last_mutation.is_some_and(|m| m > at) {
                continue;
            }
            self.convergence_checked += 1;
            for a in &self.agents {
                let quarantined: BTreeSet<(PluginId, String)> = a.daemon.quarantined().into_iter().collect();
                let desired: BTreeMap<PluginId, String> = match self.manager.flag_file(a.id.as_str()) {
                    Ok(f) => f.into_iter().filter(|e| !quarantined.contains(&(e.id.clone(), e.version.clone()))).map(|e| (e.id, e.version)).collect(),
                    Err(e) => {
                        self.convergence.push(format!("t+{t} agent {}: {e}", a.id));
                        continue;
                    }
                };
                let actual: BTreeMap<PluginId, String> = a.daemon.runtimes().into_iter().map(|r| (r.plugin, r.version)).collect();
                if desired != actual {
                    self.convergence.push(format!("t+{t} agent {}: wanted {desired:?}, holds {actual:?}", a.id));
                }
            }
        }
    }

    fn load(&self, source: &PluginSource) -> Result<PluginPackage, String> {
        match source {
            PluginSource::Sample { sample } => samples::by_name(sample).ok_or_else(|| format!("no sample plugin named {sample}")),
            PluginSource::Dir { dir } => {
                let path = self.scenario.base_dir.join(dir);
                package::read_dir(&path).map_err(|e| format!("{}: {e}", path.display()))
            }
        }
    }

    fn import(&mut self, source: &PluginSource) -> Result<(), String> {
        let pkg = self.load(source)?;
        let archive = package::pack(&pkg, PackageSize::Full).map_err(|e| e.to_string())?;
        let meta = self.manager.import_plugin(&archive).map_err(|e| e.to_string())?;
        self.rec.note("manager", "plugin_imported", format!("{} {} enabled={}", meta.id, meta.name, meta.enabled));
        let (decoders, rules) = pkg.server.map(|s| (s.decoders, s.rules)).unwrap_or_default();
        let mut model = self.model.lock().unwrap();
        model.plugins.insert(meta.id.clone(), (decoders, rules, meta.enabled));
        model.rebuild();
        drop(model);
        self.mutated();
        Ok(())
    }

    fn resolve(&self, reference: &str) -> Result<PluginId, String> {
        let listed = self.manager.list_plugins();
        if let Some(m) = listed.iter().find(|m| m.id.as_str() == reference || m.name == reference) {
            return Ok(m.id.clone());
        }
        samples::by_name(reference)
            .map(|p| p.metadata.id)
            .or_else(|| PluginId::parse(reference).ok())
            .ok_or_else(|| format!("unknown plugin {reference}"))
    }

    fn set_enabled(&mut self, id: &PluginId, enabled: bool) {
        let mut model = self.model.lock().unwrap();
        if let Some(p) = model.plugins.get_mut(id) {
            p.2 = enabled;
        }
        model.rebuild();
    }

    fn sandbox_of(&self, agent: &str) -> Result<PathBuf, String> {
        let id = AgentId::parse(agent).map_err(|e| e.to_string())?;
        self.agents.iter().find(|a| a.id == id).map(|a| a.sandbox.clone()).ok_or_else(|| format!("undeclared agent {agent}"))
    }

    /// Hand lines to an agent's sink as if its own collectors had produced them.
    fn ship_direct(&self, agent: &str, lines: &[String]) -> Result<(), String> {
        let id = AgentId::parse(agent).map_err(|e| e.to_string())?;
        let sink = IngestSink {
            agent: id,
            manager: self.manager.clone(),
            rec: self.rec.clone(),
            model: self.model.clone(),
            delivered: self.delivered.clone(),
            ticketing: self.scenario.manager.ticket_webhook,
        };
        for line in lines {
            sink.ship(line);
        }
        Ok(())
    }

    fn apply(&mut self, action: &Action) -> Result<(), String> {
        match action {
            Action::InjectLog { agent, file, line, lines } => {
                let all: Vec<String> = line.iter().chain(lines).cloned().collect();
                match file {
                    None => self.ship_direct(agent, &all)?,
                    Some(f) => {
                        let path = self.sandbox_of(agent)?.join(f.trim_start_matches('/'));
                        let mut out = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                        for l in &all {
                            writeln!(out, "{l}").map_err(|e| e.to_string())?;
                        }
                        self.rec.note(format!("agent {agent}"), "log_written", format!("{} lines to {f}", all.len()));
                    }
                }
            }
            Action::FileOp { agent, op, path, content } => {
                let full = self.sandbox_of(agent)?.join(path.trim_start_matches('/'));
                let done = match op {
                    FileOp::Create | FileOp::Modify => fs::write(&full, content),
                    FileOp::Append => fs::OpenOptions::new().append(true).open(&full).and_then(|mut f| f.write_all(content.as_bytes())),
                    FileOp::Delete => fs::remove_file(&full),
                };
                done.map_err(|e| format!("{op:?} {}: {e}", full.display()))?;
                self.rec.note(format!("agent {agent}"), "file_changed", format!("{op:?} {path}").to_lowercase());
            }
            Action::ImportPlugin { sample, dir } => {
                let source = PluginSource::from_parts(sample, dir).ok_or("import_plugin needs exactly one of sample and dir")?;
                self.import(&source)?
            }
            Action::EnablePlugin { plugin } => {
                let id = self.resolve(plugin)?;
                self.manager.enable_plugin(id.as_str()).map_err(|e| e.to_string())?;
                self.set_enabled(&id, true);
                self.rec.note("manager", "plugin_enabled", id.to_string());
                self.mutated();
            }
            Action::DisablePlugin { plugin } => {
                let id = self.resolve(plugin)?;
                self.manager.disable_plugin(id.as_str()).map_err(|e| e.to_string())?;
                self.set_enabled(&id, false);
                self.rec.note("manager", "plugin_disabled", id.to_string());
                self.mutated();
            }
            Action::DeletePlugin { plugin } => {
                let id = self.resolve(plugin)?;
                self.manager.delete_plugin(id.as_str()).map_err(|e| e.to_string())?;
                let mut model = self.model.lock().unwrap();
                model.plugins.remove(&id);
                model.rebuild();
                drop(model);
                self.rec.note("manager", "plugin_deleted", id.to_string());
                self.mutated();
            }
            Action::BumpVersion { plugin, version } => {
                let id = self.resolve(plugin)?;
                let mut meta = self.manager.get_metadata(id.as_str()).map_err(|e| e.to_string())?;
                meta.version = Version::parse(version).map_err(|e| e.to_string())?;
                self.manager.update_metadata(id.as_str(), meta).map_err(|e| e.to_string())?;
                self.rec.note("manager", "version_changed", format!("{id} -> {version}"));
                self.mutated();
            }
            Action::SetAgents { plugin, agents } => {
                let id = self.resolve(plugin)?;
                let mut meta = self.manager.get_metadata(id.as_str()).map_err(|e| e.to_string())?;
                meta.agents = agents.iter().map(|a| AgentId::parse(a).map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
                let (_, diff) = self.manager.update_metadata(id.as_str(), meta).map_err(|e| e.to_string())?;
                self.rec.note("manager", "agents_changed", format!("{id} {diff:?}"));
                self.mutated();
            }
            Action::CloseTicket { ticket } => {
                let mut all = self.manager.tickets(None);
                all.sort_by_key(|t| t.id);
                let n = usize::try_from(*ticket).ok().and_then(|n| n.checked_sub(1)).ok_or("tickets are numbered from 1")?;
                let target = all.get(n).ok_or_else(|| format!("only {} tickets exist", all.len()))?;
                let closed = self.manager.close_ticket(target.id).map_err(|e| e.to_string())?;
                self.rec.note("manager", "ticket_closed", format!("ticket {:?}", closed.status).to_lowercase());
            }
            Action::RunFormatterAnswers { answers, passphrase } => {
                let text = formatter(answers).map_err(|e| e.to_string())?;
                self.rec.note("operator", "topology_written", format!("{} entries", text.lines().count()));
                let sealed = vault_encrypt_with(text.as_bytes(), passphrase, KdfParams::LIGHT).map_err(|e| e.to_string())?;
                let opened = vault_decrypt(&sealed, passphrase).map_err(|e| e.to_string())?;
                if opened != text.as_bytes() {
                    return Err("vault round trip changed the topology".into());
                }
                self.rec.note("operator", "topology_sealed", "vault round trip ok");
                let entries = parse_topology(&text).map_err(|e| e.to_string())?;
                let plan = plan_deployment(&entries, &Integrations::default(), PlanOptions::default()).map_err(|e| e.to_string())?;
                let mut stub = SshStub::new();
                let report = execute_plan(&plan, &mut stub).map_err(|e| e.to_string())?;
                for s in &report.steps {
                    self.rec.note("deployer", "deploy_step", format!("{} on {}", s.action, s.target));
                }
                self.plan = plan.steps.iter().map(|s| s.action.label()).collect();
            }
        }
        Ok(())
    }

    fn report(&mut self) -> Report {
        let expect = &self.scenario.expect;
        let raised = self.manager.all_alerts();
        let alerts: Vec<AlertKey> = raised.iter().map(AlertKey::of).collect();
        let ar_invocations: Vec<Vec<String>> = self.manager.ar_records().into_iter().map(|r| r.request.args).collect();
        let tickets = self.manager.tickets(None);
        let closed = tickets.iter().filter(|t| t.closed.is_some()).count();
        let deliveries = self.manager.deliveries();
        let delivered_ok = deliveries.iter().filter(|d| d.delivered).count();
        let dead = deliveries.iter().filter(|d| !d.delivered).count();
        let transcript = self.rec.entries.lock().unwrap().clone();
        let mut checks = Vec::new();

        let errors = &self.action_errors;
        checks.push(check("actions", errors.is_empty(), if errors.is_empty() { "all applied".into() } else { errors.join("; ") }));

        let predicted = Oracle::default().predict(&self.delivered.lock().unwrap(), self.scenario.manager.reputation.as_ref());
        let agree = predicted == alerts;
        checks.push(check(
            "oracle",
            agree,
            if agree { format!("{} alerts predicted and observed", alerts.len()) } else { format!("predicted {predicted:?}, observed {alerts:?}") },
        ));

        let conv = &self.convergence;
        checks.push(check(
            "convergence",
            conv.is_empty(),
            if conv.is_empty() { format!("{} checkpoints within two polls", self.convergence_checked) } else { conv.join("; ") },
        ));

        if let Some(wanted) = &expect.alerts {
            checks.push(match_alerts(wanted, &alerts));
        }
        let mut count = |name: &str, want: Option<usize>, got: usize| {
            if let Some(want) = want {
                checks.push(check(name, want == got, format!("expected {want}, got {got}")));
            }
        };
        count("tickets", expect.tickets, tickets.len());
        count("closed_tickets", expect.closed_tickets, closed);
        count("webhook_deliveries", expect.webhook_deliveries, delivered_ok);
        count("dead_letters", expect.dead_letters, dead);
        count("reputation_scans", expect.reputation_scans, self.manager.scans().len());
        if let Some(want) = &expect.ar_invocations {
            checks.push(check("ar_invocations", want == &ar_invocations, format!("expected {want:?}, got {ar_invocations:?}")));
        }
        if let Some(want) = &expect.interactions {
            checks.push(in_order(want, &transcript));
        }
        if let Some(want) = &expect.plan {
            checks.push(check("plan", want == &self.plan, format!("expected {want:?}, got {:?}", self.plan)));
        }
        if !expect.counters.is_empty() {
            let counters = serde_json::to_value(self.manager.counters()).unwrap_or_default();
            for (name, want) in &expect.counters {
                let got = counters.get(name).and_then(|v| v.as_u64());
                checks.push(check(format!("counter {name}"), got == Some(*want), format!("expected {want}, got {got:?}")));
            }
        }

        Report {
            scenario: self.scenario.name.clone(),
            checks,
            transcript,
            alerts,
            raised,
            ar_invocations,
            tickets: tickets.len(),
            closed_tickets: closed,
            webhook_deliveries: self.webhook.bodies.lock().unwrap().len(),
            plan: self.plan.clone(),
            wall_ms: 0,
        }
    }
}

/// Each observed alert has to be claimed by one expectation and every
/// expectation needs exactly `count` claims.
fn match_alerts(wanted: &[crate::scenario::ExpectedAlert], observed: &[AlertKey]) -> Check {
    let mut claims = vec![0usize; wanted.len()];
    let mut unclaimed = Vec::new();
    for a in observed {
        let hit = wanted.iter().position(|w| {
            w.level == a.level
                && a.description.contains(&w.description)
                && w.agent.as_ref().is_none_or(|g| *g == a.agent)
                && w.rule.is_none_or(|r| r == a.rule_id)
        });
        match hit {
            Some(i) => claims[i] += 1,
            None => unclaimed.push(format!("rule {} level {} agent {}", a.rule_id, a.level, a.agent)),
        }
    }
    let mut problems = unclaimed.iter().map(|u| format!("unexpected {u}")).collect::<Vec<_>>();
    for (w, got) in wanted.iter().zip(&claims) {
        if *got != w.count {
            problems.push(format!("level {} '{}' wanted {} got {got}", w.level, w.description, w.count));
        }
    }
    let detail = if problems.is_empty() { format!("{} alerts as expected", observed.len()) } else { problems.join("; ") };
    check("alerts", problems.is_empty(), detail)
}

fn in_order(kinds: &[String], transcript: &[Entry]) -> Check {
    let mut it = transcript.iter();
    for (i, kind) in kinds.iter().enumerate() {
        if !it.any(|e| &e.kind == kind) {
            return check("interactions", false, format!("step {} '{kind}' missing after {:?}", i + 1, &kinds[..i]));
        }
    }
    check("interactions", true, kinds.join(" -> "))
}
