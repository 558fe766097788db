//! An in-memory manager endpoint for driving the daemon without a network.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use soc_core::wire::{ActiveResponseRequest, FlagEntry, FlagFile};
use soc_core::{AgentId, PluginId};

use crate::client::{ApiFailure, ManagerApi};

#[derive(Default)]
struct State {
    flags: BTreeMap<AgentId, FlagFile>,
    archives: BTreeMap<PluginId, Vec<u8>>,
    ar_calls: Vec<(PluginId, ActiveResponseRequest)>,
    ar_failures: VecDeque<ApiFailure>,
    fetches: Vec<PluginId>,
    down: bool,
}

#[derive(Default)]
pub struct FakeManager {
    state: Mutex<State>,
}

impl FakeManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_flags(&self, agent: &AgentId, entries: FlagFile) {
        self.state.lock().unwrap().flags.insert(agent.clone(), entries);
    }

    pub fn flags(&self, agent: &AgentId) -> FlagFile {
        self.state.lock().unwrap().flags.get(agent).cloned().unwrap_or_default()
    }

    pub fn put_archive(&self, id: &PluginId, archive: Vec<u8>) {
        self.state.lock().unwrap().archives.insert(id.clone(), archive);
    }

    /// Queue failures returned by the next AR submissions, in order.
    pub fn fail_active_responses(&self, failures: impl IntoIterator<Item = ApiFailure>) {
        self.state.lock().unwrap().ar_failures.extend(failures);
    }

    pub fn set_down(&self, down: bool) {
        self.state.lock().unwrap().down = down;
    }

    pub fn ar_calls(&self) -> Vec<(PluginId, ActiveResponseRequest)> {
        self.state.lock().unwrap().ar_calls.clone()
    }

    pub fn fetches(&self) -> Vec<PluginId> {
        self.state.lock().unwrap().fetches.clone()
    }
}

impl ManagerApi for FakeManager {
    fn flag_file(&self, agent: &AgentId) -> Result<FlagFile, ApiFailure> {
        let state = self.state.lock().unwrap();
        if state.down {
            return Err(ApiFailure::Unreachable("manager is down".into()));
        }
        Ok(state.flags.get(agent).cloned().unwrap_or_default())
    }

    fn fetch_minimal(&self, id: &PluginId) -> Result<Vec<u8>, ApiFailure> {
        let mut state = self.state.lock().unwrap();
        if state.down {
            return Err(ApiFailure::Unreachable("manager is down".into()));
        }
        state.fetches.push(id.clone());
        state.archives.get(id).cloned().ok_or_else(|| ApiFailure::Rejected {
            status: 404,
            kind: "UnknownPlugin".into(),
            message: format!("no plugin {id}"),
        })
    }

    fn active_response(&self, id: &PluginId, request: &ActiveResponseRequest) -> Result<(), ApiFailure> {
        let mut state = self.state.lock().unwrap();
        if state.down {
            return Err(ApiFailure::Unreachable("manager is down".into()));
        }
        state.ar_calls.push((id.clone(), request.clone()));
        match state.ar_failures.pop_front() {
            Some(failure) => Err(failure),
            None => Ok(()),
        }
    }
}

pub fn entry(id: &PluginId, version: &str) -> FlagEntry {
    FlagEntry { id: id.clone(), version: version.to_string() }
}

/// A daemon wired to a [`FakeManager`], a scripted executor and a memory
/// sink, stepped one virtual second at a time.
pub struct Rig {
    pub clock: soc_core::clock::VirtualClock,
    pub manager: std::sync::Arc<FakeManager>,
    pub sink: std::sync::Arc<crate::shipper::MemorySink>,
    pub executor: std::sync::Arc<crate::executor::ScriptedExecutor>,
    pub daemon: crate::Daemon,
}

impl Rig {
    /// `root` holds the agent's state directories.
    pub fn new(root: &std::path::Path, mut config: crate::AgentConfig, default: crate::executor::Script) -> Self {
        use std::sync::Arc;
        let start = chrono::NaiveDate::from_ymd_opt(2021, 1, 28).unwrap().and_hms_opt(18, 49, 1).unwrap();
        let clock = soc_core::clock::VirtualClock::starting_at(start);
        config.ossec_dir = root.join("ossec");
        config.descriptor_dir = root.join("scheduler");
        config.ar_backoff_ms = 0;
        config.hostname.get_or_insert_with(|| "agent-host".into());
        config.username.get_or_insert_with(|| "root".into());
        let manager = Arc::new(FakeManager::new());
        let sink = Arc::new(crate::shipper::MemorySink::default());
        let executor = Arc::new(crate::executor::ScriptedExecutor::new(Arc::new(clock.clone()), default));
        let parts = crate::Collaborators {
            api: manager.clone(),
            sink: sink.clone(),
            executor: executor.clone(),
            clock: Arc::new(clock.clone()),
        };
        let daemon = crate::Daemon::new(config, parts).expect("state directories");
        Self { clock, manager, sink, executor, daemon }
    }

    pub fn agent(&self) -> AgentId {
        self.daemon.config().agent_id.clone()
    }

    pub fn now(&self) -> chrono::NaiveDateTime {
        use soc_core::clock::Clock;
        self.clock.now()
    }

    pub fn tick(&mut self) {
        let now = self.now();
        self.daemon.tick(now);
    }

    /// Step the clock `seconds` times by one second, ticking after each step.
    pub fn advance(&mut self, seconds: u32) {
        for _ in 0..seconds {
            self.clock.advance(chrono::Duration::seconds(1));
            self.tick();
        }
    }

    /// Make `version` of a plugin downloadable and list it in this agent's flag file.
    pub fn publish(&self, id: &PluginId, name: &str, version: &str, interval: u32) {
        self.manager.put_archive(id, minimal_archive(id, name, version, interval));
        let mut flags = self.manager.flags(&self.agent());
        flags.retain(|e| &e.id != id);
        flags.push(entry(id, version));
        self.manager.set_flags(&self.agent(), flags);
    }

    pub fn withdraw(&self, id: &PluginId) {
        let mut flags = self.manager.flags(&self.agent());
        flags.retain(|e| &e.id != id);
        self.manager.set_flags(&self.agent(), flags);
    }

    /// `{plugin: version}` of the runtimes the daemon currently holds.
    pub fn runtime_set(&self) -> BTreeMap<PluginId, String> {
        self.daemon.runtimes().into_iter().map(|rt| (rt.plugin, rt.version)).collect()
    }

    pub fn desired_set(&self) -> BTreeMap<PluginId, String> {
        self.manager.flags(&self.agent()).into_iter().map(|e| (e.id, e.version)).collect()
    }
}

/// A MINIMAL archive for a plugin whose script does nothing in particular.
pub fn minimal_archive(id: &PluginId, name: &str, version: &str, interval: u32) -> Vec<u8> {
    use soc_core::package::{pack, template_package, PackageSize};
    let mut pkg = template_package();
    pkg.metadata.id = id.clone();
    pkg.metadata.name = name.to_string();
    pkg.metadata.version = soc_core::Version::parse(version).expect("version");
    pkg.metadata.interval = interval;
    pkg.metadata.enabled = true;
    pack(&pkg, PackageSize::Minimal).expect("packs")
}
