#![allow(dead_code)]

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{NaiveDate, NaiveDateTime};
use soc_core::clock::VirtualClock;
use soc_core::engine::syslog::{envelope, format_syslog_line};
use soc_core::package::{pack, PackageSize, PluginPackage};
use soc_core::AgentId;
use soc_manager::reputation::ReputationBackend;
use soc_manager::tickets::WebhookTransport;
use soc_manager::{Manager, ManagerConfig, Services};
use tempfile::TempDir;

pub const WEBHOOK: &str = "http://tickets.invalid/hook";

#[derive(Default)]
pub struct RecordingWebhook {
    pub down: AtomicBool,
    pub bodies: Mutex<Vec<String>>,
}

impl WebhookTransport for RecordingWebhook {
    fn post(&self, _url: &str, body: &str) -> Result<(), String> {
        if self.down.load(Ordering::SeqCst) {
            return Err("connection refused".into());
        }
        self.bodies.lock().unwrap().push(body.to_string());
        Ok(())
    }
}

pub struct Harness {
    pub dir: TempDir,
    pub manager: Arc<Manager>,
    pub webhook: Arc<RecordingWebhook>,
    pub clock: VirtualClock,
}

pub fn start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2021, 1, 28).unwrap().and_hms_opt(18, 49, 1).unwrap()
}

pub fn config(dir: &TempDir) -> ManagerConfig {
    ManagerConfig {
        data_root: dir.path().to_path_buf(),
        ticket_webhook: Some(WEBHOOK.into()),
        webhook_attempts: 3,
        webhook_backoff_ms: 1,
        agents: ["001", "002", "003", "004"].iter().map(|a| AgentId::parse(a).unwrap()).collect(),
        ..ManagerConfig::default()
    }
}

pub fn harness_with(
    tweak: impl FnOnce(&mut ManagerConfig),
    reputation: Option<Box<dyn ReputationBackend>>,
) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(&dir);
    tweak(&mut cfg);
    let webhook = Arc::new(RecordingWebhook::default());
    let clock = VirtualClock::starting_at(start());
    let manager = Manager::open_with(
        cfg,
        Services { clock: Arc::new(clock.clone()), webhook: webhook.clone(), reputation },
    )
    .unwrap();
    Harness { dir, manager, webhook, clock }
}

pub fn harness() -> Harness {
    harness_with(|_| {}, None)
}

pub fn agent(id: &str) -> AgentId {
    AgentId::parse(id).unwrap()
}

pub fn full_zip(pkg: &PluginPackage) -> Vec<u8> {
    pack(pkg, PackageSize::Full).unwrap()
}

pub fn plugin_line(plugin: &str, message: &str) -> String {
    format_syslog_line(start(), "host-a", "root", &envelope(plugin, message))
}

pub fn sshd_line(user: &str, ip: &str) -> String {
    format_syslog_line(
        start(),
        "web-01",
        "sshd[2211]",
        &format!("Failed password for {user} from {ip} port 51122 ssh2"),
    )
}

/// A plugin with one rule per level 0..=15 keyed on the captured number.
pub fn level_probe() -> PluginPackage {
    let mut pkg = soc_core::package::template_package();
    pkg.metadata = soc_core::package::parse_metadata(
        r#"{"id": "1e5e1000000000000000000000000001", "name": "LevelProbe", "description": "",
            "version": "1.0", "enabled": true, "script": {"interval": 5}, "agents": ["004"]}"#,
    )
    .unwrap();
    let server = pkg.server.as_mut().unwrap();
    server.decoders = "<decoder name=\"level_probe\">\n<prematch>SOC_NES: LevelProbe: </prematch>\n</decoder>\n\
        <decoder name=\"level_probe\">\n<parent>level_probe</parent>\n<regex>level=(\\d+)</regex>\n<order>level</order>\n</decoder>\n"
        .into();
    server.rules = (0..=15)
        .map(|l| {
            format!(
                "<rule id=\"{}\" level=\"{l}\">\n<decoded_as>level_probe</decoded_as>\n<field name=\"level\">{l}</field>\n\
                 <description>probe level {l}</description>\n<group>probe</group>\n</rule>\n",
                101000 + l
            )
        })
        .collect();
    pkg
}
