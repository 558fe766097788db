//! The manager's state machine: plugin registry, flag files, analysis
//! pipeline, tickets and active responses.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use soc_core::clock::{Clock, SystemClock};
use soc_core::engine::syslog::{format_syslog_line, parse_syslog_line, LogSource};
use soc_core::engine::{Alert, Engine, EngineError, LogEvent, Verdict};
use soc_core::package::{self, PackageSize, PluginMetadata, PluginPackage, ServerParts};
use soc_core::process::{run_with_timeout, RunOutcome};
use soc_core::wire::{
    self, ActiveResponseRecord, ActiveResponseRequest, AgentDiff, AgentInfo, AlertPage, ArOutcome, Enrollment,
    FlagEntry, Health, IngestCounters, NewTicket, Ticket, TicketNotice, TicketStatus,
};
use soc_core::{AgentId, PluginId};

use crate::alerts::{AlertFilter, AlertStore};
use crate::builtin;
use crate::composite;
use crate::config::ManagerConfig;
use crate::error::{ManagerError, Result};
use crate::layout::{remove_if_exists, write_atomic, Layout};
use crate::reputation::{self, ReputationBackend, Verdict as ReputationVerdict};
use crate::tickets::{Delivery, HttpWebhook, Notifier, RetryPolicy, TicketStore, WebhookTransport};

/// Pluggable collaborators; the defaults talk to the real world.
pub struct Services {
    pub clock: Arc<dyn Clock>,
    pub webhook: Arc<dyn WebhookTransport>,
    /// Overrides the backend named in the configuration.
    pub reputation: Option<Box<dyn ReputationBackend>>,
}

impl Default for Services {
    fn default() -> Self {
        Self { clock: Arc::new(SystemClock), webhook: Arc::new(HttpWebhook::default()), reputation: None }
    }
}

#[derive(Debug, Clone, Default)]
struct AgentRecord {
    name: String,
    enrolled: bool,
    last_seen: Option<NaiveDateTime>,
    connections: usize,
}

#[derive(Serialize, Deserialize)]
struct EnrolledAgent {
    id: AgentId,
    name: String,
}

struct Registry {
    plugins: BTreeMap<PluginId, PluginPackage>,
    local_decoders: String,
    local_rules: String,
    agents: BTreeMap<AgentId, AgentRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub agent_id: AgentId,
    pub file: String,
    pub sha256: String,
    pub verdict: Option<ReputationVerdict>,
    pub error: Option<String>,
}

pub struct Manager {
    config: ManagerConfig,
    layout: Layout,
    clock: Arc<dyn Clock>,
    registry: Mutex<Registry>,
    engine: RwLock<Arc<Engine>>,
    alerts: AlertStore,
    tickets: Mutex<TicketStore>,
    notifier: Notifier,
    reputation: Option<Box<dyn ReputationBackend>>,
    scans: Mutex<Vec<ScanRecord>>,
    ar_records: Mutex<Vec<ActiveResponseRecord>>,
    counters: Mutex<IngestCounters>,
}

fn compile(local_decoders: &str, local_rules: &str) -> std::result::Result<Engine, EngineError> {
    Engine::from_documents([(builtin::DECODERS, builtin::RULES), (local_decoders, local_rules)])
}

fn parse_plugin_id(raw: &str) -> Result<PluginId> {
    PluginId::parse(raw).map_err(|_| ManagerError::UnknownPlugin(raw.to_string()))
}

fn read_plugin_dir(dir: &std::path::Path) -> std::io::Result<Option<PluginPackage>> {
    let read = |name: &str| fs::read_to_string(dir.join(name));
    let metadata = match package::parse_metadata(&read(package::METADATA)?) {
        Ok(m) => m,
        Err(e) => {
            log::error!("ignoring plugin directory {}: {e}", dir.display());
            return Ok(None);
        }
    };
    Ok(Some(PluginPackage {
        metadata,
        script: read(package::SCRIPT)?,
        server: Some(ServerParts {
            decoders: read(package::DECODERS)?,
            rules: read(package::RULES)?,
            active_response: read(package::ACTIVE_RESPONSE)?,
        }),
    }))
}

impl Manager {
    pub fn open(config: ManagerConfig) -> Result<Arc<Self>> {
        Self::open_with(config, Services::default())
    }

    pub fn open_with(config: ManagerConfig, services: Services) -> Result<Arc<Self>> {
        let layout = Layout::new(&config.data_root);
        layout.create_dirs()?;

        let mut plugins = BTreeMap::new();
        for entry in fs::read_dir(layout.plugins_dir())? {
            let entry = entry?;
            let Some(id) = entry.file_name().to_str().and_then(|n| PluginId::parse(n).ok()) else { continue };
            if let Some(pkg) = read_plugin_dir(&entry.path())? {
                if pkg.metadata.id == id {
                    plugins.insert(id, pkg);
                } else {
                    log::error!("plugin directory {} holds metadata for {}", id, pkg.metadata.id);
                }
            }
        }

        let mut agents: BTreeMap<AgentId, AgentRecord> = BTreeMap::new();
        for id in &config.agents {
            agents.entry(id.clone()).or_default().enrolled = true;
        }
        if let Ok(text) = fs::read_to_string(layout.agents_file()) {
            let enrolled: Vec<EnrolledAgent> =
                serde_json::from_str(&text).map_err(|e| ManagerError::Storage(std::io::Error::other(e)))?;
            for a in enrolled {
                let rec = agents.entry(a.id).or_default();
                rec.enrolled = true;
                rec.name = a.name;
            }
        }
        for entry in fs::read_dir(layout.shared_dir())? {
            let name = entry?.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".json")).and_then(|n| AgentId::parse(n).ok()) {
                agents.entry(id).or_default();
            }
        }

        let enabled: Vec<(&PluginId, &ServerParts)> = plugins
            .iter()
            .filter(|(_, p)| p.metadata.enabled)
            .filter_map(|(id, p)| p.server.as_ref().map(|s| (id, s)))
            .collect();
        let local_decoders = composite::rebuild(enabled.iter().map(|(id, s)| (*id, s.decoders.as_str())));
        let local_rules = composite::rebuild(enabled.iter().map(|(id, s)| (*id, s.rules.as_str())));
        let engine = compile(&local_decoders, &local_rules).map_err(|e| {
            ManagerError::Storage(std::io::Error::other(format!("stored plugins do not compile: {e}")))
        })?;

        let reputation = match services.reputation {
            Some(backend) => Some(backend),
            None => match &config.reputation {
                Some(spec) => Some(
                    reputation::from_spec(spec, config.reputation_key.clone())
                        .map_err(|e| ManagerError::Storage(std::io::Error::other(e)))?,
                ),
                None => None,
            },
        };

        let notifier = Notifier::start(
            services.webhook,
            RetryPolicy {
                attempts: config.webhook_attempts,
                backoff: std::time::Duration::from_millis(config.webhook_backoff_ms),
            },
            Some(layout.dead_letters()),
        );

        let manager = Self {
            alerts: AlertStore::open(&layout.alerts_journal())?,
            tickets: Mutex::new(TicketStore::open(&layout.tickets_journal())?),
            registry: Mutex::new(Registry { plugins, local_decoders, local_rules, agents }),
            engine: RwLock::new(Arc::new(engine)),
            notifier,
            reputation,
            scans: Mutex::default(),
            ar_records: Mutex::default(),
            counters: Mutex::default(),
            clock: services.clock,
            layout,
            config,
        };
        {
            let mut reg = manager.registry.lock().unwrap();
            manager.write_documents(&reg)?;
            for (id, pkg) in &reg.plugins {
                let script = manager.layout.ar_script(id);
                match (&pkg.server, pkg.metadata.enabled) {
                    (Some(server), true) => write_atomic(&script, server.active_response.as_bytes())?,
                    _ => remove_if_exists(&script)?,
                }
            }
            let everyone: Vec<AgentId> = reg.agents.keys().cloned().collect();
            manager.publish_flags(&mut reg, everyone.iter())?;
        }
        Ok(Arc::new(manager))
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn now(&self) -> NaiveDateTime {
        self.clock.now()
    }

    pub fn engine(&self) -> Arc<Engine> {
        Arc::clone(&self.engine.read().unwrap())
    }

    // ---- registry -------------------------------------------------------

    pub fn list_plugins(&self) -> Vec<PluginMetadata> {
        self.registry.lock().unwrap().plugins.values().map(|p| p.metadata.clone()).collect()
    }

    pub fn get_metadata(&self, id: &str) -> Result<PluginMetadata> {
        let id = parse_plugin_id(id)?;
        let reg = self.registry.lock().unwrap();
        reg.plugins.get(&id).map(|p| p.metadata.clone()).ok_or_else(|| ManagerError::UnknownPlugin(id.to_string()))
    }

    pub fn package(&self, id: &str) -> Result<PluginPackage> {
        let id = parse_plugin_id(id)?;
        let reg = self.registry.lock().unwrap();
        reg.plugins.get(&id).cloned().ok_or_else(|| ManagerError::UnknownPlugin(id.to_string()))
    }

    pub fn export_plugin(&self, id: &str, size: PackageSize) -> Result<Vec<u8>> {
        Ok(package::pack(&self.package(id)?, size)?)
    }

    pub fn template(&self) -> Vec<u8> {
        package::make_template()
    }

    pub fn import_plugin(&self, archive: &[u8]) -> Result<PluginMetadata> {
        let pkg = package::validate_package(archive)?;
        if pkg.size() != PackageSize::Full {
            return Err(ManagerError::NotFull);
        }
        let id = pkg.metadata.id.clone();
        let mut reg = self.registry.lock().unwrap();
        if reg.plugins.contains_key(&id) {
            return Err(ManagerError::DuplicatePlugin(id));
        }
        let wants_enabled = pkg.metadata.enabled;
        let mut stored = pkg;
        stored.metadata.enabled = false;
        if wants_enabled {
            // Check before anything touches the disk, so a bad plugin leaves no trace.
            let server = stored.server.as_ref().expect("full package");
            self.candidate_documents(&reg, &id, server)?;
        }
        self.write_plugin_dir(&stored)?;
        reg.plugins.insert(id.clone(), stored);
        if wants_enabled {
            if let Err(e) = self.enable_locked(&mut reg, &id) {
                reg.plugins.remove(&id);
                let _ = fs::remove_dir_all(self.layout.plugin_dir(&id));
                return Err(e);
            }
        }
        Ok(reg.plugins[&id].metadata.clone())
    }

    pub fn delete_plugin(&self, id: &str) -> Result<()> {
        let id = parse_plugin_id(id)?;
        let mut reg = self.registry.lock().unwrap();
        let enabled = reg.plugins.get(&id).ok_or_else(|| ManagerError::UnknownPlugin(id.to_string()))?.metadata.enabled;
        if enabled {
            self.disable_locked(&mut reg, &id)?;
        }
        reg.plugins.remove(&id);
        match fs::remove_dir_all(self.layout.plugin_dir(&id)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    pub fn enable_plugin(&self, id: &str) -> Result<PluginMetadata> {
        let id = parse_plugin_id(id)?;
        let mut reg = self.registry.lock().unwrap();
        self.enable_locked(&mut reg, &id)?;
        Ok(reg.plugins[&id].metadata.clone())
    }

    pub fn disable_plugin(&self, id: &str) -> Result<PluginMetadata> {
        let id = parse_plugin_id(id)?;
        let mut reg = self.registry.lock().unwrap();
        self.disable_locked(&mut reg, &id)?;
        Ok(reg.plugins[&id].metadata.clone())
    }

    /// Apply a metadata update and whatever enable/disable/republish it implies.
    pub fn update_metadata(&self, id: &str, new: PluginMetadata) -> Result<(PluginMetadata, AgentDiff)> {
        let id = parse_plugin_id(id)?;
        if new.id != id {
            return Err(ManagerError::IdMismatch { expected: id, got: new.id });
        }
        let mut reg = self.registry.lock().unwrap();
        let old = reg.plugins.get(&id).ok_or_else(|| ManagerError::UnknownPlugin(id.to_string()))?.metadata.clone();
        let old_agents: BTreeSet<AgentId> = old.agents.iter().cloned().collect();
        let new_agents: BTreeSet<AgentId> = new.agents.iter().cloned().collect();
        let diff = wire::diff_agents(&old_agents, &new_agents);

        let mut staged = new.clone();
        staged.enabled = old.enabled;
        self.store_metadata(&mut reg, &staged)?;

        let outcome = match (old.enabled, new.enabled) {
            (false, true) => self.enable_locked(&mut reg, &id),
            (true, false) => self.disable_locked(&mut reg, &id),
            (true, true) => {
                let touched: Vec<AgentId> = old_agents.union(&new_agents).cloned().collect();
                self.publish_flags(&mut reg, touched.iter()).map_err(Into::into)
            }
            (false, false) => Ok(()),
        };
        if let Err(e) = outcome {
            self.store_metadata(&mut reg, &old)?;
            return Err(e);
        }
        Ok((reg.plugins[&id].metadata.clone(), diff))
    }

    fn store_metadata(&self, reg: &mut Registry, meta: &PluginMetadata) -> Result<()> {
        write_atomic(&self.layout.plugin_dir(&meta.id).join(package::METADATA), meta.to_json().as_bytes())?;
        reg.plugins.get_mut(&meta.id).expect("registered").metadata = meta.clone();
        Ok(())
    }

    fn write_plugin_dir(&self, pkg: &PluginPackage) -> Result<()> {
        let dir = self.layout.plugin_dir(&pkg.metadata.id);
        fs::create_dir_all(dir.join("active-response"))?;
        for (name, contents) in pkg.members() {
            write_atomic(&dir.join(name), contents.as_bytes())?;
        }
        Ok(())
    }

    fn candidate_documents(&self, reg: &Registry, id: &PluginId, server: &ServerParts) -> Result<(String, String, Engine)> {
        let decoders = composite::insert(&reg.local_decoders, id, &server.decoders)
            .ok_or_else(|| ManagerError::AlreadyEnabled(id.clone()))?;
        let rules = composite::insert(&reg.local_rules, id, &server.rules)
            .ok_or_else(|| ManagerError::AlreadyEnabled(id.clone()))?;
        let engine = compile(&decoders, &rules).map_err(|source| ManagerError::FragmentParse { plugin: id.clone(), source })?;
        Ok((decoders, rules, engine))
    }

    fn enable_locked(&self, reg: &mut Registry, id: &PluginId) -> Result<()> {
        let pkg = reg.plugins.get(id).ok_or_else(|| ManagerError::UnknownPlugin(id.to_string()))?;
        if pkg.metadata.enabled {
            return Err(ManagerError::AlreadyEnabled(id.clone()));
        }
        let server = pkg.server.clone().ok_or(ManagerError::NotFull)?;
        let (decoders, rules, engine) = self.candidate_documents(reg, id, &server)?;

        write_atomic(&self.layout.ar_script(id), server.active_response.as_bytes())?;
        reg.local_decoders = decoders;
        reg.local_rules = rules;
        self.write_documents(reg)?;
        *self.engine.write().unwrap() = Arc::new(engine);

        let mut meta = reg.plugins[id].metadata.clone();
        meta.enabled = true;
        self.store_metadata(reg, &meta)?;
        self.publish_flags(reg, meta.agents.iter())?;
        Ok(())
    }

    fn disable_locked(&self, reg: &mut Registry, id: &PluginId) -> Result<()> {
        let pkg = reg.plugins.get(id).ok_or_else(|| ManagerError::UnknownPlugin(id.to_string()))?;
        if !pkg.metadata.enabled {
            return Err(ManagerError::NotEnabled(id.clone()));
        }
        let decoders = composite::remove(&reg.local_decoders, id).unwrap_or_else(|| reg.local_decoders.clone());
        let rules = composite::remove(&reg.local_rules, id).unwrap_or_else(|| reg.local_rules.clone());
        let engine = compile(&decoders, &rules).map_err(|source| ManagerError::FragmentParse { plugin: id.clone(), source })?;

        reg.local_decoders = decoders;
        reg.local_rules = rules;
        self.write_documents(reg)?;
        *self.engine.write().unwrap() = Arc::new(engine);
        remove_if_exists(&self.layout.ar_script(id))?;

        let mut meta = reg.plugins[id].metadata.clone();
        meta.enabled = false;
        self.store_metadata(reg, &meta)?;
        self.publish_flags(reg, meta.agents.iter())?;
        Ok(())
    }

    fn write_documents(&self, reg: &Registry) -> std::io::Result<()> {
        write_atomic(&self.layout.local_decoders(), reg.local_decoders.as_bytes())?;
        write_atomic(&self.layout.local_rules(), reg.local_rules.as_bytes())
    }

    fn flag_entries(reg: &Registry, agent: &AgentId) -> Vec<FlagEntry> {
        reg.plugins
            .values()
            .filter(|p| p.metadata.enabled && p.metadata.runs_on(agent))
            .map(|p| FlagEntry { id: p.metadata.id.clone(), version: p.metadata.version.as_str().to_string() })
            .collect()
    }

    fn publish_flags<'a>(&self, reg: &mut Registry, agents: impl Iterator<Item = &'a AgentId>) -> std::io::Result<()> {
        for agent in agents {
            let entries = Self::flag_entries(reg, agent);
            write_atomic(&self.layout.flag_file(agent), wire::flag_file_json(&entries).as_bytes())?;
            reg.agents.entry(agent.clone()).or_default();
        }
        Ok(())
    }

    /// Current composite documents, as maintained incrementally.
    pub fn local_documents(&self) -> (String, String) {
        let reg = self.registry.lock().unwrap();
        (reg.local_decoders.clone(), reg.local_rules.clone())
    }

    /// Composite documents rebuilt from the enabled set alone.
    pub fn rebuilt_documents(&self) -> (String, String) {
        let reg = self.registry.lock().unwrap();
        let enabled: Vec<(&PluginId, &ServerParts)> = reg
            .plugins
            .iter()
            .filter(|(_, p)| p.metadata.enabled)
            .filter_map(|(id, p)| p.server.as_ref().map(|s| (id, s)))
            .collect();
        (
            composite::rebuild(enabled.iter().map(|(id, s)| (*id, s.decoders.as_str()))),
            composite::rebuild(enabled.iter().map(|(id, s)| (*id, s.rules.as_str()))),
        )
    }

    // ---- agents -----------------------------------------------------------

    fn known_agent(&self, raw: &str) -> Result<AgentId> {
        let id = AgentId::parse(raw).map_err(|_| ManagerError::UnknownAgent(raw.to_string()))?;
        if self.registry.lock().unwrap().agents.contains_key(&id) {
            Ok(id)
        } else {
            Err(ManagerError::UnknownAgent(raw.to_string()))
        }
    }

    pub fn is_known_agent(&self, id: &AgentId) -> bool {
        self.registry.lock().unwrap().agents.contains_key(id)
    }

    /// The agent's flag file; also counts as a sign of life.
    pub fn flag_file(&self, agent: &str) -> Result<Vec<FlagEntry>> {
        let id = self.known_agent(agent)?;
        let now = self.now();
        let mut reg = self.registry.lock().unwrap();
        reg.agents.get_mut(&id).expect("known").last_seen = Some(now);
        Ok(Self::flag_entries(&reg, &id))
    }

    pub fn enroll(&self, request: Enrollment) -> Result<AgentInfo> {
        let mut reg = self.registry.lock().unwrap();
        let id = match request.id {
            Some(id) => {
                if reg.agents.get(&id).is_some_and(|a| a.enrolled) {
                    return Err(ManagerError::DuplicateAgent(id));
                }
                id
            }
            None => (1..=999)
                .filter_map(AgentId::from_number)
                .find(|id| !reg.agents.get(id).is_some_and(|a| a.enrolled))
                .ok_or(ManagerError::AgentIdsExhausted)?,
        };
        let rec = reg.agents.entry(id.clone()).or_default();
        rec.enrolled = true;
        rec.name = request.name;
        let enrolled: Vec<EnrolledAgent> = reg
            .agents
            .iter()
            .filter(|(_, a)| a.enrolled)
            .map(|(id, a)| EnrolledAgent { id: id.clone(), name: a.name.clone() })
            .collect();
        write_atomic(&self.layout.agents_file(), serde_json::to_string_pretty(&enrolled).unwrap().as_bytes())?;
        self.publish_flags(&mut reg, std::iter::once(&id))?;
        Ok(self.agent_info(&reg, &id))
    }

    fn agent_info(&self, reg: &Registry, id: &AgentId) -> AgentInfo {
        let rec = &reg.agents[id];
        let window = Duration::seconds(self.config.active_window_secs as i64);
        let recent = rec.last_seen.is_some_and(|t| self.now() - t <= window);
        AgentInfo { id: id.clone(), name: rec.name.clone(), active: rec.connections > 0 || recent, last_seen: rec.last_seen }
    }

    pub fn agents(&self) -> Vec<AgentInfo> {
        let reg = self.registry.lock().unwrap();
        reg.agents.keys().map(|id| self.agent_info(&reg, id)).collect()
    }

    /// An ingest connection said hello. `false` for unknown agents.
    pub fn agent_connected(&self, id: &AgentId) -> bool {
        let now = self.now();
        let mut reg = self.registry.lock().unwrap();
        match reg.agents.get_mut(id) {
            Some(rec) => {
                rec.connections += 1;
                rec.last_seen = Some(now);
                true
            }
            None => {
                drop(reg);
                self.reject_connection();
                false
            }
        }
    }

    pub fn reject_connection(&self) {
        self.counters.lock().unwrap().rejected_connections += 1;
    }

    pub fn agent_disconnected(&self, id: &AgentId) {
        let now = self.now();
        if let Some(rec) = self.registry.lock().unwrap().agents.get_mut(id) {
            rec.connections = rec.connections.saturating_sub(1);
            rec.last_seen = Some(now);
        }
    }

    // ---- analysis -----------------------------------------------------------

    /// Run one received line through the pipeline. Returns the alerts raised,
    /// including any derived from a reputation scan.
    pub fn ingest_line(&self, agent: &AgentId, line: &str) -> Vec<Alert> {
        let now = self.now();
        let event = match parse_syslog_line(line, agent, LogSource::External, now) {
            Ok(event) => event,
            Err(unparsed) => {
                self.counters.lock().unwrap().unparsed += 1;
                self.note_unparsed(agent, line, unparsed.reason);
                unparsed.event
            }
        };
        let event = LogEvent { source: LogSource::of_agent_message(&event.message), ..event };
        {
            let mut c = self.counters.lock().unwrap();
            c.lines += 1;
        }
        if let Some(rec) = self.registry.lock().unwrap().agents.get_mut(agent) {
            rec.last_seen = Some(now);
        }
        self.evaluate(event)
    }

    fn note_unparsed(&self, agent: &AgentId, line: &str, reason: &str) {
        let written = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.layout.unparsed_log())
            .and_then(|mut f| writeln!(f, "{agent} {reason}: {line}"));
        if let Err(e) = written {
            log::warn!("cannot record unparsed line: {e}");
        }
    }

    fn evaluate(&self, event: LogEvent) -> Vec<Alert> {
        let verdict = self.engine().evaluate(&event);
        let mut raised = Vec::new();
        {
            let mut c = self.counters.lock().unwrap();
            match &verdict {
                Verdict::NoDecode => c.no_decode += 1,
                Verdict::NoMatch(_) => c.no_match += 1,
                Verdict::Suppressed { .. } => c.suppressed += 1,
                Verdict::Alert(_) => c.alerts += 1,
            }
        }
        let Verdict::Alert(alert) = verdict else { return raised };
        let alert = match self.alerts.append(alert) {
            Ok(alert) => alert,
            Err(e) => {
                log::error!("cannot persist alert: {e}");
                return raised;
            }
        };
        self.notify_ticketing(&alert);
        let scan = (alert.group == builtin::FIM_GROUP)
            .then(|| Some((alert.fields.get("file")?.clone(), alert.fields.get("sha256")?.clone())))
            .flatten();
        raised.push(alert.clone());
        if let Some((file, sha256)) = scan {
            raised.extend(self.scan_file_reputation(&alert.agent_id, &file, &sha256));
        }
        raised
    }

    /// Open a ticket and queue its webhook delivery when the alert qualifies.
    fn notify_ticketing(&self, alert: &Alert) -> Option<Ticket> {
        let url = self.config.ticket_webhook.as_ref()?;
        if alert.level < self.config.ticket_threshold {
            return None;
        }
        let ticket = match self.tickets.lock().unwrap().create(alert.id, "", self.now()) {
            Ok(t) => t,
            Err(e) => {
                log::error!("cannot open ticket for alert {}: {e}", alert.id);
                return None;
            }
        };
        let text = format!(
            "[level {}] {} (rule {}, agent {}, alert {}, ticket {})",
            alert.level, alert.description, alert.rule_id, alert.agent_id, alert.id, ticket.id
        );
        self.notifier.enqueue(
            url,
            TicketNotice {
                ticket_id: ticket.id,
                alert_id: alert.id,
                level: alert.level,
                rule_id: alert.rule_id,
                description: alert.description.clone(),
                agent_id: alert.agent_id.clone(),
                timestamp: alert.timestamp,
                text,
            },
        );
        Some(ticket)
    }

    /// Ask the reputation backend about a file; flagged files raise a
    /// derived alert through the normal pipeline.
    pub fn scan_file_reputation(&self, agent: &AgentId, file: &str, sha256: &str) -> Vec<Alert> {
        let Some(backend) = &self.reputation else { return Vec::new() };
        let result = backend.scan(file, sha256);
        let mut record = ScanRecord {
            agent_id: agent.clone(),
            file: file.into(),
            sha256: sha256.into(),
            verdict: None,
            error: None,
        };
        let derived = match result {
            Ok(verdict) => {
                record.verdict = Some(verdict.clone());
                (verdict.positives > 0).then(|| {
                    builtin::reputation_message(verdict.positives, verdict.total, file, sha256, &verdict.permalink)
                })
            }
            Err(e) => {
                log::warn!("reputation scan of {file} failed: {e}");
                record.error = Some(e);
                None
            }
        };
        self.scans.lock().unwrap().push(record);
        let Some(message) = derived else { return Vec::new() };
        let now = self.now();
        let event = LogEvent {
            timestamp: now,
            hostname: "manager".into(),
            username: "reputation".into(),
            raw: format_syslog_line(now, "manager", "reputation", &message),
            message,
            agent_id: agent.clone(),
            source: LogSource::External,
        };
        self.evaluate(event)
    }

    pub fn scans(&self) -> Vec<ScanRecord> {
        self.scans.lock().unwrap().clone()
    }

    pub fn alerts(&self, filter: &AlertFilter) -> AlertPage {
        self.alerts.query(filter)
    }

    pub fn all_alerts(&self) -> Vec<Alert> {
        self.alerts.all()
    }

    pub fn counters(&self) -> IngestCounters {
        self.counters.lock().unwrap().clone()
    }

    // ---- tickets --------------------------------------------------------------

    pub fn create_ticket(&self, request: NewTicket) -> Result<Ticket> {
        if self.alerts.get(request.alert_id).is_none() {
            return Err(ManagerError::UnknownAlert(request.alert_id));
        }
        Ok(self.tickets.lock().unwrap().create(request.alert_id, &request.assignee, self.now())?)
    }

    pub fn tickets(&self, status: Option<TicketStatus>) -> Vec<Ticket> {
        self.tickets.lock().unwrap().list(status)
    }

    pub fn close_ticket(&self, id: u64) -> Result<Ticket> {
        let now = self.now();
        self.tickets.lock().unwrap().close(id, now)
    }

    pub fn deliveries(&self) -> Vec<Delivery> {
        self.notifier.deliveries()
    }

    /// Wait for queued background work (webhook deliveries) to drain.
    pub fn quiesce(&self) {
        self.notifier.wait_idle();
    }

    // ---- active response --------------------------------------------------------

    pub fn active_response(&self, id: &str, request: ActiveResponseRequest) -> Result<ActiveResponseRecord> {
        let id = parse_plugin_id(id)?;
        {
            let reg = self.registry.lock().unwrap();
            let pkg = reg.plugins.get(&id).ok_or_else(|| ManagerError::UnknownPlugin(id.to_string()))?;
            if !pkg.metadata.enabled {
                return Err(ManagerError::PluginDisabled(id));
            }
        }
        if let Some(bad) = request.bad_arg() {
            return Err(ManagerError::BadArgument(bad.to_string()));
        }
        let interpreter = self.config.interpreter();
        let (program, leading) = interpreter.split_first().ok_or_else(|| ManagerError::BadRequest("no interpreter".into()))?;
        let mut command = Command::new(program);
        command
            .args(leading)
            .arg(self.layout.ar_script(&id))
            .args(&request.args)
            .current_dir(self.layout.active_response_dir())
            .env("SOC_PLUGIN_ID", id.as_str())
            .env("SOC_AGENT_ID", request.agent_id.as_str());
        let outcome = run_with_timeout(command, self.config.ar_timeout())?;
        let (outcome, done) = match outcome {
            RunOutcome::Exited(done) if done.success() => (ArOutcome::Completed, done),
            RunOutcome::Exited(done) => (ArOutcome::Failed, done),
            RunOutcome::TimedOut(done) => (ArOutcome::TimedOut, done),
        };
        let record = ActiveResponseRecord {
            plugin_id: id.clone(),
            request,
            outcome: outcome.clone(),
            exit_code: done.code,
            stdout: done.stdout,
            stderr: done.stderr,
        };
        let written = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.layout.ar_journal())
            .and_then(|mut f| writeln!(f, "{}", serde_json::to_string(&record).unwrap()));
        if let Err(e) = written {
            log::error!("cannot journal active response: {e}");
        }
        self.ar_records.lock().unwrap().push(record.clone());
        match outcome {
            ArOutcome::Completed => Ok(record),
            ArOutcome::Failed => Err(ManagerError::ExecutionFailure { plugin: id, code: record.exit_code }),
            ArOutcome::TimedOut => Err(ManagerError::ExecutionTimeout(id)),
        }
    }

    pub fn ar_records(&self) -> Vec<ActiveResponseRecord> {
        self.ar_records.lock().unwrap().clone()
    }

    // ---- status -----------------------------------------------------------------

    pub fn health(&self) -> Health {
        let agents = self.agents();
        let (plugins, enabled_plugins) = {
            let reg = self.registry.lock().unwrap();
            (reg.plugins.len(), reg.plugins.values().filter(|p| p.metadata.enabled).count())
        };
        let deliveries = self.deliveries();
        Health {
            status: "ok".into(),
            total_agents: agents.len(),
            active_agents: agents.iter().filter(|a| a.active).count(),
            plugins,
            enabled_plugins,
            ingest: self.counters(),
            ticket_deliveries: deliveries.iter().filter(|d| d.delivered).count() as u64,
            dead_letters: deliveries.iter().filter(|d| !d.delivered).count() as u64,
        }
    }

    /// Paths of every flag file currently published.
    pub fn flag_file_paths(&self) -> Vec<PathBuf> {
        let reg = self.registry.lock().unwrap();
        reg.agents.keys().map(|a| self.layout.flag_file(a)).filter(|p| p.exists()).collect()
    }

    pub fn shutdown(&self) {
        self.notifier.shutdown();
    }
}
