mod common;

use std::collections::HashMap;
use std::fs;
use std::sync::atomic::Ordering;

use common::*;
use soc_core::engine::syslog::{envelope, format_syslog_line};
use soc_core::package::{samples, template_package};
use soc_core::wire::{ActiveResponseRequest, ArOutcome, NewTicket, TicketNotice, TicketStatus};
use soc_manager::alerts::AlertFilter;
use soc_manager::reputation::MockReputation;
use soc_manager::{ManagerError, Services};

const SHA: &str = "9f86d081884c7d659a2feaa0c55ad015a3bf4f1b2b0b822cd15d6c15b0f00a08";

fn fim_line(path: &str, sha: &str) -> String {
    format_syslog_line(start(), "win-07", "agentd", &envelope("syscheck", &format!("File '{path}' added sha256={sha}")))
}

fn mock(positives: u32) -> MockReputation {
    MockReputation { total: 70, verdicts: HashMap::from([(SHA.to_string(), positives)]), down: false }
}

fn ar_request(agent_id: &str, args: &[&str]) -> ActiveResponseRequest {
    ActiveResponseRequest { agent_id: agent(agent_id), args: args.iter().map(|s| s.to_string()).collect(), timestamp: start() }
}

#[test]
fn ssh_failure_raises_one_level_5_alert() {
    let h = harness();
    let alerts = h.manager.ingest_line(&agent("004"), &sshd_line("root", "10.0.3.10"));
    assert_eq!(alerts.len(), 1);
    let a = &alerts[0];
    assert_eq!((a.rule_id, a.level), (5716, 5));
    assert_eq!(a.agent_id, agent("004"));
    assert_eq!(a.fields["srcip"], "10.0.3.10");
    assert_eq!(a.fields["dstuser"], "root");
    let invalid = h.manager.ingest_line(&agent("004"), &sshd_line("invalid user admin", "10.0.3.11"));
    assert_eq!(invalid[0].fields["dstuser"], "admin");
    assert_eq!(h.manager.all_alerts().len(), 2);
}

#[test]
fn fim_added_alert_triggers_a_flagging_scan() {
    let h = harness_with(|_| {}, Some(Box::new(mock(45))));
    let alerts = h.manager.ingest_line(&agent("003"), &fim_line("C:/Windows/winhlp32.exe", SHA));
    assert_eq!(alerts.len(), 2);
    assert_eq!(alerts[0].description, "File added to the system.");
    assert_eq!(alerts[0].rule_id, 554);
    assert_eq!(alerts[1].rule_id, 87105);
    assert_eq!(alerts[1].fields["positives"], "45");
    assert_eq!(alerts[1].fields["total"], "70");
    assert_eq!(alerts[1].agent_id, agent("003"));
    let scans = h.manager.scans();
    assert_eq!(scans.len(), 1);
    assert_eq!(scans[0].verdict.as_ref().unwrap().positives, 45);
}

#[test]
fn clean_or_unreachable_scans_raise_nothing_more() {
    let h = harness_with(|_| {}, Some(Box::new(mock(45))));
    let other = "a".repeat(64);
    assert_eq!(h.manager.ingest_line(&agent("003"), &fim_line("/tmp/x", &other)).len(), 1);
    assert_eq!(h.manager.scans()[0].verdict.as_ref().unwrap().positives, 0);

    let down = MockReputation { down: true, ..mock(45) };
    let h = harness_with(|_| {}, Some(Box::new(down)));
    assert_eq!(h.manager.ingest_line(&agent("003"), &fim_line("/tmp/x", SHA)).len(), 1);
    let scans = h.manager.scans();
    assert!(scans[0].verdict.is_none());
    assert!(scans[0].error.is_some());
}

#[test]
fn deletions_are_not_scanned() {
    let h = harness_with(|_| {}, Some(Box::new(mock(45))));
    let line = format_syslog_line(start(), "h", "agentd", &envelope("syscheck", "File '/tmp/x' deleted"));
    let alerts = h.manager.ingest_line(&agent("003"), &line);
    assert_eq!(alerts[0].description, "File deleted.");
    assert!(h.manager.scans().is_empty());
}

#[test]
fn webhook_deliveries_follow_the_threshold() {
    let h = harness();
    h.manager.import_plugin(&full_zip(&level_probe())).unwrap();
    let levels: Vec<u8> = (0..100).map(|i| ((i * 7 + 3) % 16) as u8).collect();
    for level in &levels {
        h.manager.ingest_line(&agent("004"), &plugin_line("LevelProbe", &format!("level={level}")));
    }
    h.manager.quiesce();
    let expected = levels.iter().filter(|l| **l >= 5).count();
    assert_eq!(h.webhook.bodies.lock().unwrap().len(), expected);
    assert_eq!(h.manager.deliveries().len(), expected);
    assert_eq!(h.manager.tickets(None).len(), expected);
    assert_eq!(h.manager.all_alerts().len(), levels.iter().filter(|l| **l > 0).count());
    assert_eq!(h.manager.counters().suppressed as usize, levels.iter().filter(|l| **l == 0).count());
    for body in h.webhook.bodies.lock().unwrap().iter() {
        let notice: TicketNotice = serde_json::from_str(body).unwrap();
        assert!(notice.level >= 5);
        assert!(notice.text.contains(&format!("level {}", notice.level)));
    }
}

#[test]
fn threshold_boundary() {
    let h = harness();
    h.manager.import_plugin(&full_zip(&level_probe())).unwrap();
    h.manager.ingest_line(&agent("004"), &plugin_line("LevelProbe", "level=4"));
    h.manager.quiesce();
    assert!(h.webhook.bodies.lock().unwrap().is_empty());
    h.manager.ingest_line(&agent("004"), &plugin_line("LevelProbe", "level=5"));
    h.manager.quiesce();
    assert_eq!(h.webhook.bodies.lock().unwrap().len(), 1);
}

#[test]
fn no_webhook_means_no_automatic_tickets() {
    let h = harness_with(|c| c.ticket_webhook = None, None);
    h.manager.ingest_line(&agent("004"), &sshd_line("root", "1.2.3.4"));
    h.manager.quiesce();
    assert!(h.manager.tickets(None).is_empty());
    assert_eq!(h.manager.all_alerts().len(), 1);
}

#[test]
fn unreachable_webhook_dead_letters_after_retries() {
    let h = harness();
    h.webhook.down.store(true, Ordering::SeqCst);
    h.manager.ingest_line(&agent("004"), &sshd_line("root", "1.2.3.4"));
    h.manager.quiesce();
    assert_eq!(h.manager.all_alerts().len(), 1);
    let d = h.manager.deliveries();
    assert_eq!(d.len(), 1);
    assert!(!d[0].delivered);
    assert_eq!(d[0].attempts, 3);
    let dead = fs::read_to_string(h.manager.layout().dead_letters()).unwrap();
    assert_eq!(dead.lines().count(), 1);
    assert_eq!(h.manager.health().dead_letters, 1);
}

#[test]
fn ticket_lifecycle() {
    let h = harness_with(|c| c.ticket_webhook = None, None);
    let alert = h.manager.ingest_line(&agent("004"), &sshd_line("root", "1.2.3.4")).remove(0);
    let t = h.manager.create_ticket(NewTicket { alert_id: alert.id, assignee: "analyst".into() }).unwrap();
    assert_eq!(t.status, TicketStatus::Open);
    h.clock.advance(chrono::Duration::minutes(5));
    let closed = h.manager.close_ticket(t.id).unwrap();
    assert_eq!(closed.status, TicketStatus::Closed);
    assert_eq!(closed.closed, Some(start() + chrono::Duration::minutes(5)));
    assert!(matches!(h.manager.close_ticket(t.id), Err(ManagerError::AlreadyClosed(_))));
    assert!(matches!(h.manager.close_ticket(99), Err(ManagerError::UnknownTicket(99))));
    assert!(matches!(
        h.manager.create_ticket(NewTicket { alert_id: 1234, assignee: String::new() }),
        Err(ManagerError::UnknownAlert(1234))
    ));
    assert_eq!(h.manager.tickets(Some(TicketStatus::Open)).len(), 0);
    assert_eq!(h.manager.tickets(Some(TicketStatus::Closed)).len(), 1);
}

#[test]
fn zeroday_levels_and_tickets() {
    let h = harness();
    let mut pkg = samples::zeroday_file_watch();
    pkg.metadata.enabled = true;
    h.manager.import_plugin(&full_zip(&pkg)).unwrap();
    let passwd = h.manager.ingest_line(&agent("004"), &plugin_line("ZerodayFileWatch", "/etc/passwd cat 22276"));
    assert_eq!(passwd.len(), 1);
    assert_eq!(passwd[0].level, 10);
    assert_eq!(passwd[0].decoder, "zeroday_fileWatch");
    let shadow = h.manager.ingest_line(&agent("004"), &plugin_line("ZerodayFileWatch", "/etc/shadow cat 22276"));
    assert_eq!(shadow[0].level, 15);
    assert_eq!(shadow[0].fields["filePath"], "/etc/shadow");
    assert_eq!(shadow[0].fields["pid"], "22276");
}

#[test]
fn unparsable_and_undecodable_lines_are_counted() {
    let h = harness();
    assert!(h.manager.ingest_line(&agent("004"), "garbage without a header").is_empty());
    assert!(h.manager.ingest_line(&agent("004"), &format_syslog_line(start(), "h", "u", "nothing to see")).is_empty());
    let c = h.manager.counters();
    assert_eq!(c.lines, 2);
    assert_eq!(c.unparsed, 1);
    assert_eq!(c.no_decode, 2);
    assert!(fs::read_to_string(h.manager.layout().unparsed_log()).unwrap().contains("garbage"));
}

#[test]
fn alert_queries_filter_and_page() {
    let h = harness();
    for (i, a) in ["001", "004", "004", "002", "004"].iter().enumerate() {
        h.clock.advance(chrono::Duration::seconds(1));
        h.manager.ingest_line(&agent(a), &sshd_line("root", &format!("10.0.0.{i}")));
    }
    let page = h.manager.alerts(&AlertFilter { agent: Some(agent("004")), ..AlertFilter::default() });
    assert_eq!(page.total, 3);
    let ids: Vec<u64> = page.alerts.iter().map(|a| a["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, vec![5, 3, 2]);
    let page = h.manager.alerts(&AlertFilter { offset: 1, limit: 2, ..AlertFilter::default() });
    assert_eq!(page.total, 5);
    assert_eq!(page.alerts.len(), 2);
    assert_eq!(page.alerts[0]["id"], 4);
    assert_eq!(h.manager.alerts(&AlertFilter { min_level: 12, ..AlertFilter::default() }).total, 0);
}

#[test]
fn alerts_survive_a_restart() {
    let h = harness();
    h.manager.ingest_line(&agent("004"), &sshd_line("root", "1.2.3.4"));
    h.manager.shutdown();
    let reopened = soc_manager::Manager::open_with(config(&h.dir), Services::default()).unwrap();
    assert_eq!(reopened.all_alerts(), h.manager.all_alerts());
    let next = reopened.ingest_line(&agent("004"), &sshd_line("root", "1.2.3.4"));
    assert_eq!(next[0].id, 2);
}

// ---- active responses -------------------------------------------------------

fn ar_harness(script: &str, timeout: u64) -> (Harness, String) {
    let h = harness_with(|c| c.ar_timeout_secs = timeout, None);
    let mut pkg = template_package();
    pkg.metadata.enabled = true;
    pkg.server.as_mut().unwrap().active_response = script.into();
    let id = h.manager.import_plugin(&full_zip(&pkg)).unwrap().id.to_string();
    (h, id)
}

#[test]
fn active_response_receives_arguments() {
    let script = "import os, sys\nprint(' '.join(sys.argv[1:]))\nprint(os.environ['SOC_AGENT_ID'], os.getcwd())\n";
    let (h, id) = ar_harness(script, 30);
    let record = h.manager.active_response(&id, ar_request("002", &["a", "b", "c"])).unwrap();
    assert_eq!(record.outcome, ArOutcome::Completed);
    let mut lines = record.stdout.lines();
    assert_eq!(lines.next(), Some("a b c"));
    let ar_dir = h.manager.layout().active_response_dir();
    assert_eq!(lines.next().unwrap(), format!("002 {}", ar_dir.display()));
    assert_eq!(h.manager.ar_records().len(), 1);
    assert_eq!(fs::read_to_string(h.manager.layout().ar_journal()).unwrap().lines().count(), 1);
}

#[test]
fn active_response_guards() {
    let (h, id) = ar_harness("print('x')\n", 30);
    assert!(matches!(h.manager.active_response(&id, ar_request("002", &["two words"])), Err(ManagerError::BadArgument(_))));
    assert!(matches!(h.manager.active_response(&id, ar_request("002", &[""])), Err(ManagerError::BadArgument(_))));
    assert!(matches!(
        h.manager.active_response("ffffffffffffffffffffffffffffffff", ar_request("002", &[])),
        Err(ManagerError::UnknownPlugin(_))
    ));
    h.manager.disable_plugin(&id).unwrap();
    assert!(matches!(h.manager.active_response(&id, ar_request("002", &["a"])), Err(ManagerError::PluginDisabled(_))));
    assert!(h.manager.ar_records().is_empty());
}

#[test]
fn failing_active_response_reports_exit_code() {
    let (h, id) = ar_harness("import sys\nsys.exit(3)\n", 30);
    match h.manager.active_response(&id, ar_request("002", &[])) {
        Err(ManagerError::ExecutionFailure { code, .. }) => assert_eq!(code, Some(3)),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(h.manager.ar_records()[0].outcome, ArOutcome::Failed);
}

#[test]
fn hanging_active_response_times_out() {
    let (h, id) = ar_harness("import time\ntime.sleep(30)\n", 1);
    let started = std::time::Instant::now();
    assert!(matches!(h.manager.active_response(&id, ar_request("002", &[])), Err(ManagerError::ExecutionTimeout(_))));
    assert!(started.elapsed() < std::time::Duration::from_secs(10));
    assert_eq!(h.manager.ar_records()[0].outcome, ArOutcome::TimedOut);
}
