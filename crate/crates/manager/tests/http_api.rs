mod common;

use std::io::Write;
use std::net::TcpStream;
use std::time::{Duration, Instant};

use common::*;
use serde_json::{json, Value};
use soc_core::package::{member_names, samples, template_package};
use soc_manager::{ApiServer, IngestServer};

struct Client {
    base: String,
    agent: ureq::Agent,
}

impl Client {
    fn new(server: &ApiServer) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self { base: server.base_url(), agent }
    }

    fn get(&self, path: &str) -> (u16, Vec<u8>) {
        let mut r = self.agent.get(format!("{}{path}", self.base)).call().unwrap();
        (r.status().as_u16(), r.body_mut().read_to_vec().unwrap())
    }

    fn get_json(&self, path: &str) -> (u16, Value) {
        let (status, body) = self.get(path);
        (status, serde_json::from_slice(&body).unwrap())
    }

    fn post(&self, path: &str, body: &[u8]) -> (u16, Value) {
        let mut r = self.agent.post(format!("{}{path}", self.base)).send(body).unwrap();
        let text = r.body_mut().read_to_string().unwrap();
        (r.status().as_u16(), if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap() })
    }

    fn delete(&self, path: &str) -> u16 {
        self.agent.delete(format!("{}{path}", self.base)).call().unwrap().status().as_u16()
    }
}

const FIG12: &str = "0bab811ddc3345b8970be15ef64cb12d";

#[test]
fn plugin_endpoints() {
    let h = harness();
    let server = ApiServer::spawn(h.manager.clone(), "127.0.0.1:0").unwrap();
    let c = Client::new(&server);

    assert_eq!(c.get_json("/plugins/"), (200, json!([])));
    let (status, template) = c.get("/plugins/template-plugin.zip");
    assert_eq!(status, 200);
    assert_eq!(member_names(&template).unwrap().len(), 5);

    let (status, meta) = c.post("/plugins/", &template);
    assert_eq!(status, 201);
    assert_eq!(meta["id"], FIG12);
    assert_eq!(meta["enabled"], false);
    let (status, err) = c.post("/plugins/", &template);
    assert_eq!(status, 409);
    assert_eq!(err["error"], "DuplicatePlugin");
    let (status, err) = c.post("/plugins", b"junk");
    assert_eq!(status, 400);
    assert_eq!(err["error"], "ValidationError");

    let (_, listed) = c.get_json("/plugins");
    assert_eq!(listed.as_array().unwrap().len(), 1);

    let (status, mut meta) = c.get_json(&format!("/plugins/{FIG12}.json"));
    assert_eq!(status, 200);
    assert_eq!(meta["script"]["interval"], 60);
    meta["enabled"] = json!(true);
    let (status, updated) = c.post(&format!("/plugins/{FIG12}.json"), meta.to_string().as_bytes());
    assert_eq!(status, 200);
    assert_eq!(updated["enabled"], true);

    let (status, flags) = c.get_json("/shared/002.json");
    assert_eq!(status, 200);
    assert_eq!(flags, json!([{"id": FIG12, "version": "0.0.1"}]));
    let (status, err) = c.get_json("/shared/777.json");
    assert_eq!((status, err["error"].as_str()), (404, Some("UnknownAgent")));

    let (status, minimal) = c.get(&format!("/plugins/{FIG12}.zip?size=minimal"));
    assert_eq!(status, 200);
    assert_eq!(member_names(&minimal).unwrap(), vec!["metadata.json", "script.py"]);
    let (_, full) = c.get(&format!("/plugins/{FIG12}.zip?size=full"));
    assert_eq!(member_names(&full).unwrap().len(), 5);
    let (status, _) = c.get(&format!("/plugins/{FIG12}.zip?size=huge"));
    assert_eq!(status, 400);
    let (status, err) = c.get_json("/plugins/0000000000000000000000000000000a.zip?size=full");
    assert_eq!((status, err["error"].as_str()), (404, Some("UnknownPlugin")));

    let mut bad = meta.clone();
    bad["script"]["interval"] = json!(0);
    let (status, err) = c.post(&format!("/plugins/{FIG12}.json"), bad.to_string().as_bytes());
    assert_eq!((status, err["error"].as_str()), (400, Some("InvariantViolation")));
    let other = samples::host_inventory().metadata.to_json();
    let (status, err) = c.post(&format!("/plugins/{FIG12}.json"), other.as_bytes());
    assert_eq!((status, err["error"].as_str()), (400, Some("IdMismatch")));

    let (status, record) = c.post(
        &format!("/plugins/{FIG12}/ar"),
        json!({"agent_id": "002", "args": ["Arg1", "Arg2", "Arg3"], "timestamp": "2021-01-28T18:49:01"}).to_string().as_bytes(),
    );
    assert_eq!(status, 200, "{record}");
    assert_eq!(record["outcome"], "completed");
    assert!(record["stdout"].as_str().unwrap().contains("Arg1 Arg2 Arg3"));
    let (status, err) = c.post(
        &format!("/plugins/{FIG12}/ar"),
        json!({"agent_id": "002", "args": ["a b"], "timestamp": "2021-01-28T18:49:01"}).to_string().as_bytes(),
    );
    assert_eq!((status, err["error"].as_str()), (400, Some("BadArgument")));

    assert_eq!(c.delete(&format!("/plugins/{FIG12}")), 204);
    assert_eq!(c.get_json("/shared/002.json").1, json!([]));
    assert_eq!(c.delete(&format!("/plugins/{FIG12}")), 404);
}

#[test]
fn alert_ticket_and_health_endpoints() {
    let h = harness_with(|c| c.ticket_webhook = None, None);
    let server = ApiServer::spawn(h.manager.clone(), "127.0.0.1:0").unwrap();
    let c = Client::new(&server);
    assert_eq!(c.get_json("/alerts").1, json!({"total": 0, "offset": 0, "alerts": []}));
    h.manager.ingest_line(&agent("004"), &sshd_line("root", "10.0.3.10"));
    h.manager.ingest_line(&agent("001"), &sshd_line("root", "10.0.3.11"));

    let (status, page) = c.get_json("/alerts?agent=004");
    assert_eq!(status, 200);
    assert_eq!(page["total"], 1);
    let alert = &page["alerts"][0];
    assert_eq!(alert["agent.id"], "004");
    assert_eq!(alert["rule.level"], 5);
    assert_eq!(alert["rule.description"], "sshd: authentication failed.");
    assert_eq!(alert["data.srcip"], "10.0.3.10");
    assert_eq!(c.get_json("/alerts?min_level=6").1["total"], 0);
    assert_eq!(c.get_json("/alerts?nope=1").0, 400);
    assert_eq!(c.get_json("/alerts?min_level=x").1["error"], "BadFilter");

    let (status, ticket) = c.post("/tickets", json!({"alert_id": alert["id"]}).to_string().as_bytes());
    assert_eq!(status, 201);
    assert_eq!(ticket["status"], "open");
    let id = ticket["id"].as_u64().unwrap();
    assert_eq!(c.get_json("/tickets?status=open").1.as_array().unwrap().len(), 1);
    let (status, closed) = c.post(&format!("/tickets/{id}/close"), b"");
    assert_eq!(status, 200);
    assert_eq!(closed["status"], "closed");
    assert!(closed["closed"].is_string());
    let (status, err) = c.post(&format!("/tickets/{id}/close"), b"");
    assert_eq!((status, err["error"].as_str()), (409, Some("AlreadyClosed")));
    assert_eq!(c.post("/tickets/99/close", b"").0, 404);
    assert_eq!(c.post("/tickets", br#"{"alert_id": 77}"#).1["error"], "UnknownAlert");
    assert_eq!(c.get_json("/tickets?status=closed").1.as_array().unwrap().len(), 1);

    let (status, health) = c.get_json("/health");
    assert_eq!(status, 200);
    assert_eq!(health["status"], "ok");
    assert_eq!(health["ingest"]["alerts"], 2);
    assert_eq!(health["total_agents"], 4);

    let (status, enrolled) = c.post("/agents", br#"{"name": "db-01"}"#);
    assert_eq!(status, 201);
    assert_eq!(enrolled["id"], "005");
    assert_eq!(c.get_json("/agents").1.as_array().unwrap().len(), 5);
}

#[test]
fn tcp_ingest_attributes_lines_to_the_hello_agent() {
    let h = harness_with(|c| c.ticket_webhook = None, None);
    let mut pkg = template_package();
    pkg.metadata.enabled = true;
    h.manager.import_plugin(&full_zip(&pkg)).unwrap();
    let ingest = IngestServer::spawn(h.manager.clone(), "127.0.0.1:0").unwrap();

    let mut rejected = TcpStream::connect(ingest.local_addr()).unwrap();
    writeln!(rejected, "AGENT 999\n{}", sshd_line("root", "1.1.1.1")).unwrap();
    drop(rejected);

    let mut conn = TcpStream::connect(ingest.local_addr()).unwrap();
    writeln!(conn, "AGENT 004").unwrap();
    for i in 0..50 {
        writeln!(conn, "{}", sshd_line("root", &format!("10.0.0.{i}"))).unwrap();
    }
    conn.flush().unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    while h.manager.all_alerts().len() < 50 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(10));
    }
    let alerts = h.manager.all_alerts();
    assert_eq!(alerts.len(), 50);
    assert!(alerts.iter().all(|a| a.agent_id == agent("004")));
    assert!(h.manager.agents().iter().any(|a| a.id == agent("004") && a.active));
    drop(conn);
    while h.manager.counters().rejected_connections < 1 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(10));
    }
    assert_eq!(h.manager.counters().rejected_connections, 1);
}
