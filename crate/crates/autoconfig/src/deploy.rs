//! Running a plan through a transport, stopping at the first failed step.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::Serialize;
use soc_agent::install::{install_daemon, InstallMode};
use soc_agent::AgentConfig;
use soc_core::wire::{AgentInfo, Enrollment};
use soc_core::AgentId;
use soc_manager::ManagerConfig;

use crate::plan::{Action, DeploymentPlan, Step};
use crate::topology::DeviceType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Changed,
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepReport {
    pub index: usize,
    pub action: String,
    pub target: String,
    pub outcome: Outcome,
    pub detail: String,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeploymentReport {
    pub transport: String,
    pub steps: Vec<StepReport>,
    pub total_ms: u128,
}

impl DeploymentReport {
    pub fn changed(&self) -> usize {
        self.steps.iter().filter(|s| s.outcome == Outcome::Changed).count()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let mark = match s.outcome {
                Outcome::Changed => "changed",
                Outcome::Unchanged => "ok",
            };
            out.push_str(&format!("[{}] {} on {}: {mark} ({} ms) {}\n", s.index + 1, s.action, s.target, s.elapsed_ms, s.detail));
        }
        out.push_str(&format!("{} steps, {} changed, {} ms via {}\n", self.steps.len(), self.changed(), self.total_ms, self.transport));
        out
    }
}

#[derive(Debug, thiserror::Error)]
#[error("step {} ({}) failed: {cause}", step + 1, action)]
pub struct StepFailure {
    pub step: usize,
    pub action: String,
    pub cause: String,
    /// Steps that completed before the failure.
    pub report: DeploymentReport,
}

pub struct StepResult {
    pub outcome: Outcome,
    pub detail: String,
}

impl StepResult {
    fn new(outcome: Outcome, detail: impl Into<String>) -> Self {
        Self { outcome, detail: detail.into() }
    }
}

pub trait Transport {
    fn name(&self) -> &str;
    fn run_step(&mut self, step: &Step, plan: &DeploymentPlan) -> Result<StepResult, String>;
}

pub fn execute_plan(plan: &DeploymentPlan, transport: &mut dyn Transport) -> Result<DeploymentReport, StepFailure> {
    let started = Instant::now();
    let mut report = DeploymentReport { transport: transport.name().to_string(), steps: Vec::new(), total_ms: 0 };
    for (index, step) in plan.steps.iter().enumerate() {
        let t = Instant::now();
        log::info!("[{}] {} on {}", index + 1, step.action.label(), step.target());
        match transport.run_step(step, plan) {
            Ok(result) => report.steps.push(StepReport {
                index,
                action: step.action.label(),
                target: step.target().to_string(),
                outcome: result.outcome,
                detail: result.detail,
                elapsed_ms: t.elapsed().as_millis(),
            }),
            Err(cause) => {
                report.total_ms = started.elapsed().as_millis();
                return Err(StepFailure { step: index, action: step.action.label(), cause, report });
            }
        }
    }
    report.total_ms = started.elapsed().as_millis();
    Ok(report)
}

// ---- network device configuration -------------------------------------------

pub fn render_device_config(vendor: DeviceType, manager_ip: &str, ingest_port: &str) -> String {
    match vendor {
        DeviceType::Cisco => format!(
            "! syslog forwarding to the SOC manager\n\
             logging on\n\
             logging trap informational\n\
             logging origin-id hostname\n\
             logging host {manager_ip} transport tcp port {ingest_port}\n"
        ),
        DeviceType::Juniper => format!(
            "/* syslog forwarding to the SOC manager */\n\
             system {{\n    syslog {{\n        host {manager_ip} {{\n            any info;\n            port {ingest_port};\n            transport tcp;\n        }}\n    }}\n}}\n"
        ),
        other => panic!("{other} is not a network device"),
    }
}

fn param<'a>(step: &'a Step, key: &str) -> Result<&'a str, String> {
    step.parameters.get(key).map(String::as_str).ok_or_else(|| format!("plan step lacks parameter {key}"))
}

// ---- ssh stub ------------------------------------------------------------------

/// Records the remote commands each step would run; opens no connections.
#[derive(Debug, Default)]
pub struct SshStub {
    pub transcript: Vec<String>,
}

impl SshStub {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Transport for SshStub {
    fn name(&self) -> &str {
        "ssh-stub"
    }

    fn run_step(&mut self, step: &Step, plan: &DeploymentPlan) -> Result<StepResult, String> {
        let commands: Vec<String> = match &step.action {
            Action::InstallStubService { service } => vec![
                "# the package manager differs per distribution (apt, yum, zypper)".into(),
                format!("sudo install-service {service}"),
                format!("sudo systemctl enable --now {service}"),
            ],
            Action::InstallManager => vec![
                "sudo install -d /etc/soc /var/ossec".into(),
                format!(
                    "sudo tee /etc/soc/manager.toml <<< 'api_port = {}\\ningest_port = {}\\nbind = \"0.0.0.0\"'",
                    plan.options.api_port, plan.options.ingest_port
                ),
                "sudo soc manager serve --config /etc/soc/manager.toml &".into(),
            ],
            Action::ConfigureIntegrations => {
                let mut c = Vec::new();
                for key in ["ticket_webhook", "reputation_key", "reputation_backend"] {
                    if let Some(v) = step.parameters.get(key) {
                        c.push(format!("sudo soc-config set /etc/soc/manager.toml {key} '{v}'"));
                    }
                }
                c.push("sudo systemctl restart soc-manager".into());
                c
            }
            Action::InstallAgent { agent_id } => {
                let api = format!("http://{}:{}", param(step, "manager_ip")?, param(step, "api_port")?);
                vec![
                    format!("curl -fsS -X POST {api}/agents -d '{{\"id\":\"{agent_id}\",\"name\":\"{}\"}}'", step.target()),
                    format!(
                        "sudo tee /etc/soc/agent.toml <<< 'agent_id = \"{agent_id}\"\\nmanager_api = \"{api}\"\\nmanager_ingest = \"{}:{}\"'",
                        param(step, "manager_ip")?,
                        param(step, "ingest_port")?
                    ),
                    "sudo soc agent startup --config /etc/soc/agent.toml".into(),
                ]
            }
            Action::RenderDeviceConfig => {
                let vendor = step.entry.as_ref().expect("device entry").device_type;
                let text = render_device_config(vendor, param(step, "manager_ip")?, param(step, "ingest_port")?);
                vec![format!("configure terminal <<'EOF'\n{text}EOF")]
            }
        };
        let who = match &step.entry {
            Some(e) => format!("ssh -i {} {}@{}", e.key_path, e.ssh_user, e.ip),
            None => {
                let m = plan.manager().ok_or("no manager in plan")?;
                format!("ssh -i {} {}@{}", m.key_path, m.ssh_user, m.ip)
            }
        };
        let n = commands.len();
        for c in commands {
            self.transcript.push(format!("{who} -- {c}"));
        }
        Ok(StepResult::new(Outcome::Changed, format!("{n} commands recorded")))
    }
}

// ---- local ---------------------------------------------------------------------

/// Every host maps onto this machine: one state directory per entry under
/// `root`, daemons started from `program` (the `soc` executable).
pub struct LocalTransport {
    pub root: PathBuf,
    pub program: PathBuf,
    pub readiness: Duration,
    http: ureq::Agent,
}

impl LocalTransport {
    pub fn new(root: impl Into<PathBuf>, program: impl Into<PathBuf>) -> Self {
        let http = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(3)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { root: root.into(), program: program.into(), readiness: Duration::from_secs(8), http }
    }

    pub fn manager_dir(&self) -> PathBuf {
        self.root.join("manager")
    }

    pub fn manager_config_path(&self) -> PathBuf {
        self.manager_dir().join("manager.toml")
    }

    pub fn agent_dir(&self, id: &AgentId) -> PathBuf {
        self.root.join("agents").join(id.as_str())
    }

    fn api(&self, plan: &DeploymentPlan) -> String {
        format!("http://127.0.0.1:{}", plan.options.api_port)
    }

    fn healthy(&self, plan: &DeploymentPlan) -> bool {
        self.http.get(format!("{}/health", self.api(plan))).call().is_ok_and(|r| r.status().as_u16() == 200)
    }

    fn agents(&self, plan: &DeploymentPlan) -> Result<Vec<AgentInfo>, String> {
        let mut resp = self.http.get(format!("{}/agents", self.api(plan))).call().map_err(|e| e.to_string())?;
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        serde_json::from_str(&body).map_err(|e| format!("bad /agents answer: {e}"))
    }

    fn wait_until(&self, what: &str, mut ready: impl FnMut() -> bool) -> Result<(), String> {
        let deadline = Instant::now() + self.readiness;
        while Instant::now() < deadline {
            if ready() {
                return Ok(());
            }
            std::thread::sleep(Duration::from_millis(100));
        }
        Err(format!("{what} not ready after {:?}", self.readiness))
    }

    fn stub_service(&self, step: &Step, service: &str) -> Result<StepResult, String> {
        let entry = step.entry.as_ref().expect("server entry");
        let dir = self.root.join("services").join(format!("{service}-{}", entry.ip));
        let text = format!("service = \"{service}\"\nhost = \"{}\"\nstate = \"installed\"\n", entry.ip);
        write_if_changed(&dir.join("service.toml"), &text).map(|changed| {
            StepResult::new(if changed { Outcome::Changed } else { Outcome::Unchanged }, format!("stand-in at {}", dir.display()))
        })
    }

    fn desired_manager_config(&self, plan: &DeploymentPlan, current: Option<&ManagerConfig>) -> ManagerConfig {
        let mut cfg = ManagerConfig {
            bind: "127.0.0.1".into(),
            api_port: plan.options.api_port,
            ingest_port: plan.options.ingest_port,
            data_root: self.manager_dir().join("data"),
            ..ManagerConfig::default()
        };
        if let Some(cur) = current {
            cfg.ticket_webhook = cur.ticket_webhook.clone();
            cfg.reputation = cur.reputation.clone();
            cfg.reputation_key = cur.reputation_key.clone();
        }
        cfg
    }

    fn current_manager_config(&self) -> Option<ManagerConfig> {
        ManagerConfig::load(Some(&self.manager_config_path())).ok().filter(|_| self.manager_config_path().exists())
    }

    /// Write the config, then make sure a daemon running exactly that config is up.
    fn converge_manager(&self, plan: &DeploymentPlan, cfg: &ManagerConfig) -> Result<Outcome, String> {
        let dir = self.manager_dir();
        let changed = write_if_changed(&self.manager_config_path(), &cfg.to_toml())?;
        let pid_file = dir.join("manager.pid");
        let running = read_pid(&pid_file).filter(|pid| alive(*pid));
        match running {
            Some(_) if !changed && self.healthy(plan) => return Ok(Outcome::Unchanged),
            Some(pid) => stop(pid),
            None => {}
        }
        let log = dir.join("manager.log");
        let args = ["manager".into(), "serve".into(), "--config".into(), self.manager_config_path().into_os_string()];
        spawn_daemon(&self.program, &args, &log, &pid_file)?;
        self.wait_until("manager", || self.healthy(plan))
            .map_err(|e| format!("{e}; see {}", log.display()))?;
        Ok(Outcome::Changed)
    }

    fn install_manager(&self, plan: &DeploymentPlan) -> Result<StepResult, String> {
        let current = self.current_manager_config();
        let cfg = self.desired_manager_config(plan, current.as_ref());
        let outcome = self.converge_manager(plan, &cfg)?;
        Ok(StepResult::new(outcome, format!("api {} ingest {}", self.api(plan), plan.options.ingest_port)))
    }

    fn configure_integrations(&self, step: &Step, plan: &DeploymentPlan) -> Result<StepResult, String> {
        let mut cfg = self.current_manager_config().ok_or("manager is not installed")?;
        cfg.ticket_webhook = step.parameters.get("ticket_webhook").cloned().or(cfg.ticket_webhook);
        cfg.reputation_key = step.parameters.get("reputation_key").cloned().or(cfg.reputation_key);
        cfg.reputation = step.parameters.get("reputation_backend").cloned().or(cfg.reputation);
        let outcome = self.converge_manager(plan, &cfg)?;
        Ok(StepResult::new(outcome, "manager config updated"))
    }

    fn install_agent(&self, step: &Step, plan: &DeploymentPlan, id: &AgentId) -> Result<StepResult, String> {
        let entry = step.entry.as_ref().expect("agent entry");
        if !self.healthy(plan) {
            return Err("manager is not reachable".into());
        }
        let mut changed = false;
        match self.agents(plan)?.into_iter().find(|a| &a.id == id) {
            Some(known) if known.name == entry.ip => {}
            Some(known) => return Err(format!("agent id {id} is already enrolled as {}", known.name)),
            None => {
                let body = serde_json::to_string(&Enrollment { id: Some(id.clone()), name: entry.ip.clone() }).expect("json");
                let resp = self
                    .http
                    .post(format!("{}/agents", self.api(plan)))
                    .header("content-type", "application/json")
                    .send(body)
                    .map_err(|e| e.to_string())?;
                if resp.status().as_u16() != 201 {
                    return Err(format!("enrollment answered {}", resp.status()));
                }
                changed = true;
            }
        }
        let dir = self.agent_dir(id);
        let config = AgentConfig {
            agent_id: id.clone(),
            manager_api: self.api(plan),
            manager_ingest: format!("127.0.0.1:{}", plan.options.ingest_port),
            ossec_dir: dir.join("ossec"),
            descriptor_dir: dir.join("scheduler"),
            hostname: Some(entry.ip.clone()),
            username: Some(entry.ssh_user.clone()),
            ..AgentConfig::default()
        };
        let config_path = dir.join("agent.toml");
        changed |= write_if_changed(&config_path, &config.to_toml())?;
        let launch = format!("{} agent run --config {}", self.program.display(), config_path.display());
        let descriptor = soc_agent::install::descriptor_path(&config);
        let had_descriptor = descriptor.exists();
        install_daemon(&config, InstallMode::Startup, &launch).map_err(|e| e.to_string())?;
        changed |= !had_descriptor;

        let pid_file = dir.join("agent.pid");
        let running = read_pid(&pid_file).filter(|pid| alive(*pid));
        let restart = match running {
            Some(_) if !changed => false,
            Some(pid) => {
                stop(pid);
                true
            }
            None => true,
        };
        if restart {
            let args = ["agent".into(), "run".into(), "--config".into(), config_path.clone().into_os_string()];
            spawn_daemon(&self.program, &args, &dir.join("agent.log"), &pid_file)?;
            changed = true;
        }
        self.wait_until(&format!("agent {id}"), || {
            self.agents(plan).is_ok_and(|list| list.iter().any(|a| &a.id == id && a.active))
        })?;
        let outcome = if changed { Outcome::Changed } else { Outcome::Unchanged };
        Ok(StepResult::new(outcome, format!("{} agent active", param(step, "platform")?)))
    }

    fn render_device(&self, step: &Step) -> Result<StepResult, String> {
        let entry = step.entry.as_ref().expect("device entry");
        let text = render_device_config(entry.device_type, param(step, "manager_ip")?, param(step, "ingest_port")?);
        let path = self.root.join("network").join(format!("{}-{}.conf", entry.ip, entry.device_type));
        let changed = write_if_changed(&path, &text)?;
        Ok(StepResult::new(if changed { Outcome::Changed } else { Outcome::Unchanged }, path.display().to_string()))
    }

    /// Stop every daemon this transport started under `root`.
    pub fn teardown(&self) -> usize {
        let mut stopped = 0;
        let mut pid_files = vec![self.manager_dir().join("manager.pid")];
        if let Ok(entries) = fs::read_dir(self.root.join("agents")) {
            pid_files.extend(entries.flatten().map(|e| e.path().join("agent.pid")));
        }
        // Agents first, so they do not spin against a vanished manager.
        pid_files.reverse();
        for file in pid_files {
            if let Some(pid) = read_pid(&file).filter(|p| alive(*p)) {
                stop(pid);
                stopped += 1;
            }
            let _ = fs::remove_file(file);
        }
        stopped
    }
}

impl Transport for LocalTransport {
    fn name(&self) -> &str {
        "local"
    }

    fn run_step(&mut self, step: &Step, plan: &DeploymentPlan) -> Result<StepResult, String> {
        match &step.action {
            Action::InstallStubService { service } => self.stub_service(step, service),
            Action::InstallManager => self.install_manager(plan),
            Action::ConfigureIntegrations => self.configure_integrations(step, plan),
            Action::InstallAgent { agent_id } => self.install_agent(step, plan, agent_id),
            Action::RenderDeviceConfig => self.render_device(step),
        }
    }
}

fn write_if_changed(path: &Path, text: &str) -> Result<bool, String> {
    if fs::read_to_string(path).is_ok_and(|cur| cur == text) {
        return Ok(false);
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
    }
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(true)
}

fn read_pid(path: &Path) -> Option<i32> {
    fs::read_to_string(path).ok()?.trim().parse().ok()
}

/// Alive and not a zombie.
fn alive(pid: i32) -> bool {
    // SAFETY: signal 0 only checks for existence and permission.
    if unsafe { libc::kill(pid, 0) } != 0 {
        return false;
    }
    let stat = fs::read_to_string(format!("/proc/{pid}/stat")).unwrap_or_default();
    !stat.rsplit_once(')').is_some_and(|(_, rest)| rest.trim_start().starts_with('Z'))
}

fn stop(pid: i32) {
    // SAFETY: plain signal delivery to a pid we recorded.
    unsafe { libc::kill(pid, libc::SIGTERM) };
    let deadline = Instant::now() + Duration::from_secs(5);
    while alive(pid) && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(50));
    }
    if alive(pid) {
        // SAFETY: as above.
        unsafe { libc::kill(pid, libc::SIGKILL) };
    }
}

fn spawn_daemon(program: &Path, args: &[std::ffi::OsString], log: &Path, pid_file: &Path) -> Result<(), String> {
    if let Some(parent) = log.parent() {
        fs::create_dir_all(parent).map_err(|e| e.to_string())?;
    }
    let out = fs::OpenOptions::new().create(true).append(true).open(log).map_err(|e| format!("{}: {e}", log.display()))?;
    let err = out.try_clone().map_err(|e| e.to_string())?;
    let child = Command::new(program)
        .args(args)
        .stdin(Stdio::null())
        .stdout(out)
        .stderr(err)
        .spawn()
        .map_err(|e| format!("cannot start {}: {e}", program.display()))?;
    fs::write(pid_file, child.id().to_string()).map_err(|e| e.to_string())?;
    // Reap in the background so a dead daemon does not linger as a zombie.
    std::thread::spawn(move || {
        let mut child = child;
        let _ = child.wait();
    });
    Ok(())
}
