//! The real daemon against a real manager over loopback HTTP and TCP.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use soc_agent::client::{HttpManager, ManagerApi};
use soc_agent::AgentConfig;
use soc_core::package::{pack, samples, PackageSize};
use soc_core::wire::ActiveResponseRequest;
use soc_core::AgentId;
use soc_manager::{ApiServer, IngestServer, Manager, ManagerConfig};

fn manager(dir: &std::path::Path) -> Arc<Manager> {
    let config = ManagerConfig {
        data_root: dir.join("manager"),
        agents: vec![AgentId::parse("001").unwrap(), AgentId::parse("002").unwrap()],
        ..ManagerConfig::default()
    };
    Manager::open(config).unwrap()
}

#[test]
fn client_round_trips_every_agent_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mgr = manager(dir.path());
    let api = ApiServer::spawn(mgr.clone(), "127.0.0.1:0").unwrap();
    let client = HttpManager::new(&api.base_url(), Duration::from_secs(5));
    let agent = AgentId::parse("002").unwrap();
    assert!(client.flag_file(&agent).unwrap().is_empty());

    let pkg = samples::showcase_probe();
    mgr.import_plugin(&pack(&pkg, PackageSize::Full).unwrap()).unwrap();
    mgr.enable_plugin(pkg.metadata.id.as_str()).unwrap();
    let flags = client.flag_file(&agent).unwrap();
    assert_eq!(flags.len(), 1);
    assert_eq!(flags[0].id, pkg.metadata.id);
    assert_eq!(flags[0].version, "0.0.1");

    let archive = client.fetch_minimal(&pkg.metadata.id).unwrap();
    assert_eq!(soc_core::package::member_names(&archive).unwrap(), ["metadata.json", "script.py"]);

    let request = ActiveResponseRequest { agent_id: agent.clone(), args: vec!["Arg1".into()], timestamp: mgr.now() };
    client.active_response(&pkg.metadata.id, &request).unwrap();
    assert_eq!(mgr.ar_records().len(), 1);

    let unknown = soc_core::PluginId::parse("ffffffffffffffffffffffffffffffff").unwrap();
    let err = client.fetch_minimal(&unknown).unwrap_err();
    assert!(!err.retryable());
    assert!(err.to_string().contains("404"), "{err}");

    drop(api);
    assert!(client.flag_file(&agent).unwrap_err().retryable());
}

#[test]
fn daemon_fetches_runs_ships_and_requests_active_response() {
    let dir = tempfile::tempdir().unwrap();
    let mgr = manager(dir.path());
    let api = ApiServer::spawn(mgr.clone(), "127.0.0.1:0").unwrap();
    let ingest = IngestServer::spawn(mgr.clone(), "127.0.0.1:0").unwrap();
    let pkg = samples::showcase_probe();
    mgr.import_plugin(&pack(&pkg, PackageSize::Full).unwrap()).unwrap();
    mgr.enable_plugin(pkg.metadata.id.as_str()).unwrap();

    let config = AgentConfig {
        agent_id: AgentId::parse("002").unwrap(),
        manager_api: api.base_url(),
        manager_ingest: ingest.local_addr().to_string(),
        ossec_dir: dir.path().join("agent"),
        descriptor_dir: dir.path().join("sched"),
        poll_interval: 1,
        ar_backoff_ms: 10,
        ..AgentConfig::default()
    };
    let syslog = config.plugin_syslog();
    let stop = Arc::new(AtomicBool::new(false));
    let worker = {
        let stop = stop.clone();
        std::thread::spawn(move || soc_agent::run(config, stop))
    };
    let deadline = Instant::now() + Duration::from_secs(20);
    while Instant::now() < deadline && (mgr.ar_records().is_empty() || !mgr.all_alerts().iter().any(|a| a.rule_id == 100020)) {
        std::thread::sleep(Duration::from_millis(100));
    }
    stop.store(true, Ordering::SeqCst);
    let stats = worker.join().unwrap().unwrap();

    let alert = mgr.all_alerts().into_iter().find(|a| a.rule_id == 100020).expect("probe alert");
    assert_eq!(alert.agent_id.as_str(), "002");
    assert_eq!(alert.level, 6);
    let records = mgr.ar_records();
    assert_eq!(records.len(), 1, "one run inside the 60 s interval");
    assert_eq!(records[0].request.args, ["Arg1", "Arg2", "Arg3"]);
    assert_eq!(stats.runs_ok, 1);
    assert!(std::fs::read_to_string(syslog).unwrap().contains("SOC_NES: ShowcaseProbe: probe 002 ok"));
    let agents = mgr.agents();
    assert!(agents.iter().any(|a| a.id.as_str() == "002" && a.active));
}
