//! Running plugin scripts. The daemon only sees [`PluginExecutor`] and
//! [`RunHandle`], so tests can substitute scripted runs on a virtual clock.

use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::NaiveDateTime;
use soc_core::clock::Clock;
use soc_core::process::{Finished, Supervised};
use soc_core::PluginId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSpec {
    pub plugin: PluginId,
    pub version: String,
    pub dir: PathBuf,
    pub script: PathBuf,
    pub env: Vec<(String, String)>,
}

pub trait RunHandle: Send {
    fn try_finish(&mut self) -> io::Result<Option<Finished>>;
    fn terminate(&mut self) -> io::Result<Finished>;
    /// Block for up to `limit` of real time waiting for the run to end.
    fn wait_for(&mut self, limit: Duration) -> io::Result<Option<Finished>>;
}

pub trait PluginExecutor: Send + Sync {
    fn start(&self, spec: &RunSpec) -> io::Result<Box<dyn RunHandle>>;
}

/// `interpreter script.py` in the plugin directory.
pub struct ProcessExecutor {
    interpreter: Vec<String>,
}

impl ProcessExecutor {
    pub fn new(interpreter: Vec<String>) -> Self {
        Self { interpreter }
    }
}

struct ProcessRun(Supervised);

impl RunHandle for ProcessRun {
    fn try_finish(&mut self) -> io::Result<Option<Finished>> {
        self.0.try_finish()
    }

    fn terminate(&mut self) -> io::Result<Finished> {
        self.0.terminate()
    }

    fn wait_for(&mut self, limit: Duration) -> io::Result<Option<Finished>> {
        let deadline = Instant::now() + limit;
        let mut pause = Duration::from_millis(1);
        loop {
            if let Some(done) = self.0.try_finish()? {
                return Ok(Some(done));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            std::thread::sleep(pause.min(deadline - now));
            pause = (pause * 2).min(Duration::from_millis(10));
        }
    }
}

impl PluginExecutor for ProcessExecutor {
    fn start(&self, spec: &RunSpec) -> io::Result<Box<dyn RunHandle>> {
        let (program, leading) =
            self.interpreter.split_first().ok_or_else(|| io::Error::other("no interpreter configured"))?;
        let mut command = Command::new(program);
        command.args(leading).arg(&spec.script).current_dir(&spec.dir);
        for (k, v) in &spec.env {
            command.env(k, v);
        }
        Ok(Box::new(ProcessRun(Supervised::spawn(command)?)))
    }
}

/// How a scripted plugin behaves on each run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    pub stdout: String,
    pub code: i32,
    /// Virtual time the run takes.
    pub duration: chrono::Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunEvent {
    Started { plugin: PluginId, version: String, at: NaiveDateTime },
    Finished { plugin: PluginId, version: String, at: NaiveDateTime },
    Terminated { plugin: PluginId, version: String, at: NaiveDateTime },
}

#[derive(Default)]
struct Ledger {
    events: Vec<RunEvent>,
    alive: BTreeMap<PluginId, usize>,
    max_alive: usize,
}

/// Runs that finish after a scripted amount of virtual time. Every start,
/// finish and termination is recorded, along with the largest number of
/// simultaneously alive runs of any one plugin.
pub struct ScriptedExecutor {
    clock: Arc<dyn Clock>,
    scripts: Mutex<BTreeMap<(PluginId, String), Script>>,
    default: Script,
    ledger: Arc<Mutex<Ledger>>,
}

impl ScriptedExecutor {
    pub fn new(clock: Arc<dyn Clock>, default: Script) -> Self {
        Self { clock, scripts: Mutex::default(), default, ledger: Arc::default() }
    }

    pub fn script(&self, plugin: PluginId, version: &str, script: Script) {
        self.scripts.lock().unwrap().insert((plugin, version.to_string()), script);
    }

    pub fn events(&self) -> Vec<RunEvent> {
        self.ledger.lock().unwrap().events.clone()
    }

    pub fn max_concurrent_runs_of_one_plugin(&self) -> usize {
        self.ledger.lock().unwrap().max_alive
    }

    pub fn alive(&self) -> BTreeMap<PluginId, usize> {
        self.ledger.lock().unwrap().alive.clone()
    }
}

struct ScriptedRun {
    plugin: PluginId,
    version: String,
    ends: NaiveDateTime,
    script: Script,
    clock: Arc<dyn Clock>,
    ledger: Arc<Mutex<Ledger>>,
    done: bool,
}

impl ScriptedRun {
    fn close(&mut self, terminated: bool) -> Finished {
        if !self.done {
            self.done = true;
            let at = self.clock.now();
            let mut ledger = self.ledger.lock().unwrap();
            *ledger.alive.get_mut(&self.plugin).expect("started") -= 1;
            let (plugin, version) = (self.plugin.clone(), self.version.clone());
            ledger.events.push(if terminated {
                RunEvent::Terminated { plugin, version, at }
            } else {
                RunEvent::Finished { plugin, version, at }
            });
        }
        if terminated {
            Finished { code: None, signal: Some(9), stdout: String::new(), stderr: String::new() }
        } else {
            Finished { code: Some(self.script.code), signal: None, stdout: self.script.stdout.clone(), stderr: String::new() }
        }
    }
}

impl RunHandle for ScriptedRun {
    fn try_finish(&mut self) -> io::Result<Option<Finished>> {
        if self.done {
            return Ok(None);
        }
        Ok((self.clock.now() >= self.ends).then(|| self.close(false)))
    }

    fn terminate(&mut self) -> io::Result<Finished> {
        Ok(self.close(true))
    }

    fn wait_for(&mut self, _limit: Duration) -> io::Result<Option<Finished>> {
        // Virtual runs only progress when the clock does.
        self.try_finish()
    }
}

impl Drop for ScriptedRun {
    fn drop(&mut self) {
        if !self.done {
            self.close(true);
        }
    }
}

impl PluginExecutor for ScriptedExecutor {
    fn start(&self, spec: &RunSpec) -> io::Result<Box<dyn RunHandle>> {
        let script = self
            .scripts
            .lock()
            .unwrap()
            .get(&(spec.plugin.clone(), spec.version.clone()))
            .cloned()
            .unwrap_or_else(|| self.default.clone());
        let at = self.clock.now();
        {
            let mut ledger = self.ledger.lock().unwrap();
            let alive = ledger.alive.entry(spec.plugin.clone()).or_default();
            *alive += 1;
            let alive = *alive;
            ledger.max_alive = ledger.max_alive.max(alive);
            ledger.events.push(RunEvent::Started { plugin: spec.plugin.clone(), version: spec.version.clone(), at });
        }
        Ok(Box::new(ScriptedRun {
            plugin: spec.plugin.clone(),
            version: spec.version.clone(),
            ends: at + script.duration,
            script,
            clock: Arc::clone(&self.clock),
            ledger: Arc::clone(&self.ledger),
            done: false,
        }))
    }
}
