use std::collections::BTreeMap;

use proptest::prelude::*;
use soc_agent::client::ApiFailure;
use soc_agent::executor::{RunEvent, Script};
use soc_agent::sim::{entry, Rig};
use soc_agent::{AgentConfig, DaemonEvent};
use soc_core::package::{pack, template_package, PackageSize};
use soc_core::PluginId;

fn pid(n: u8) -> PluginId {
    PluginId::parse(&format!("{n:02x}{}", "0".repeat(30))).unwrap()
}

fn quiet() -> Script {
    Script { stdout: String::new(), code: 0, duration: chrono::Duration::seconds(2) }
}

fn rig(dir: &tempfile::TempDir) -> Rig {
    let config = AgentConfig { poll_interval: 3, ..AgentConfig::default() };
    Rig::new(dir.path(), config, quiet())
}

fn started(rig: &Rig, id: &PluginId) -> Vec<(String, chrono::NaiveDateTime)> {
    rig.executor
        .events()
        .into_iter()
        .filter_map(|e| match e {
            RunEvent::Started { plugin, version, at } if &plugin == id => Some((version, at)),
            _ => None,
        })
        .collect()
}

#[test]
fn new_entry_is_fetched_unpacked_and_run_immediately() {
    let dir = tempfile::tempdir().unwrap();
    let mut rig = rig(&dir);
    rig.publish(&pid(1), "Probe", "1.0", 10);
    rig.tick();
    assert_eq!(rig.runtime_set(), rig.desired_set());
    let unpacked = rig.daemon.config().download_dir().join(pid(1).as_str());
    let mut names: Vec<String> = std::fs::read_dir(&unpacked).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["metadata.json", "script.py"]);
    let local = std::fs::read_to_string(rig.daemon.config().local_flag_file()).unwrap();
    assert_eq!(soc_core::wire::parse_flag_file(&local).unwrap(), rig.desired_set().into_iter().map(|(i, v)| entry(&i, &v)).collect::<Vec<_>>());
    assert_eq!(started(&rig, &pid(1)).len(), 1, "first run starts at install");
}

#[test]
fn next_run_waits_interval_after_completion() {
    let dir = tempfile::tempdir().unwrap();
    let mut rig = rig(&dir);
    rig.publish(&pid(1), "Probe", "1.0", 10);
    rig.tick();
    let t0 = rig.now();
    rig.advance(30);
    let starts: Vec<i64> = started(&rig, &pid(1)).into_iter().map(|(_, at)| (at - t0).num_seconds()).collect();
    // 2 s of run, then 10 s of rest.
    assert_eq!(starts, [0, 12, 24]);
}

#[test]
fn log_lines_ship_in_the_plugin_envelope_and_ary_posts_once() {
    let dir = tempfile::tempdir().unwrap();
    let mut rig = rig(&dir);
    rig.publish(&pid(2), "ShowcaseProbe", "0.0.1", 60);
    rig.executor.script(
        pid(2),
        "0.0.1",
        Script { stdout: "LOG: probe 002 ok\nARY: Arg1 Arg2 Arg3\nnoise\n".into(), code: 0, duration: chrono::Duration::seconds(1) },
    );
    rig.advance(2);
    let lines = rig.sink.lines();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0], "Jan 28 18:49:03 agent-host root: SOC_NES: ShowcaseProbe: probe 002 ok");
    let calls = rig.manager.ar_calls();
    assert_eq!(calls.len(), 1);
    assert_eq!(calls[0].0, pid(2));
    assert_eq!(calls[0].1.args, ["Arg1", "Arg2", "Arg3"]);
    assert_eq!(calls[0].1.agent_id, rig.agent());
    assert_eq!(rig.daemon.stats().ignored_lines, 1);
    let log = std::fs::read_to_string(rig.daemon.config().ar_log()).unwrap();
    assert!(log.contains("\"delivered\":true"));
}

#[test]
fn version_change_either_way_terminates_and_replaces() {
    for (from, to) in [("1.0", "1.1"), ("2.0", "1.9")] {
        let dir = tempfile::tempdir().unwrap();
        let mut rig = rig(&dir);
        rig.executor.script(pid(3), from, Script { duration: chrono::Duration::seconds(8), ..quiet() });
        rig.publish(&pid(3), "Swap", from, 10);
        rig.advance(1);
        assert!(rig.daemon.runtimes()[0].running);
        rig.publish(&pid(3), "Swap", to, 10);
        rig.advance(3);
        assert_eq!(rig.runtime_set(), BTreeMap::from([(pid(3), to.to_string())]));
        let events = rig.executor.events();
        assert!(events.iter().any(|e| matches!(e, RunEvent::Terminated { version, .. } if version == from)), "{from}->{to}");
        assert_eq!(started(&rig, &pid(3)).last().unwrap().0, to);
        assert_eq!(rig.executor.max_concurrent_runs_of_one_plugin(), 1);
    }
}

#[test]
fn withdrawn_entry_is_terminated_and_removed_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut rig = rig(&dir);
    rig.executor.script(pid(4), "1.0", Script { duration: chrono::Duration::seconds(30), ..quiet() });
    rig.publish(&pid(4), "Gone", "1.0", 60);
    rig.tick();
    rig.withdraw(&pid(4));
    rig.advance(3);
    assert!(rig.runtime_set().is_empty());
    assert!(!rig.daemon.config().download_dir().join(pid(4).as_str()).exists());
    assert!(rig.executor.alive().values().all(|n| *n == 0));
    assert!(rig.daemon.events().iter().any(|e| matches!(e, DaemonEvent::Removed { .. })));
}

#[test]
fn non_minimal_or_garbage_archives_are_quarantined_until_the_version_moves() {
    let dir = tempfile::tempdir().unwrap();
    let mut rig = rig(&dir);
    let mut pkg = template_package();
    pkg.metadata.id = pid(5);
    rig.manager.put_archive(&pid(5), pack(&pkg, PackageSize::Full).unwrap());
    rig.manager.set_flags(&rig.agent(), vec![entry(&pid(5), "1.0")]);
    rig.advance(10);
    assert!(rig.runtime_set().is_empty());
    assert_eq!(rig.daemon.quarantined(), [(pid(5), "1.0".to_string())]);
    assert_eq!(rig.manager.fetches().len(), 1, "no refetch of a quarantined version");
    assert!(started(&rig, &pid(5)).is_empty());
    assert!(rig.sink.lines().iter().any(|l| l.contains("SOC_NES: agentd: plugin") && l.contains("quarantined")));

    rig.manager.put_archive(&pid(6), b"not a zip".to_vec());
    rig.manager.set_flags(&rig.agent(), vec![entry(&pid(5), "1.0"), entry(&pid(6), "1.0")]);
    rig.advance(3);
    assert_eq!(rig.daemon.quarantined().len(), 2);

    rig.publish(&pid(5), "Fixed", "1.1", 10);
    rig.advance(3);
    assert!(rig.runtime_set().contains_key(&pid(5)));
}

#[test]
fn overrunning_plugin_is_killed_at_nine_tenths_of_its_interval() {
    let dir = tempfile::tempdir().unwrap();
    let mut rig = rig(&dir);
    rig.executor.script(pid(7), "1.0", Script { duration: chrono::Duration::seconds(100), ..quiet() });
    rig.publish(&pid(7), "Slow", "1.0", 10);
    rig.tick();
    let t0 = rig.now();
    rig.advance(40);
    let terminated: Vec<i64> = rig
        .executor
        .events()
        .into_iter()
        .filter_map(|e| match e {
            RunEvent::Terminated { at, .. } => Some((at - t0).num_seconds()),
            _ => None,
        })
        .collect();
    // Killed at 9 s, rests 10 s, restarts at 19 s, killed at 28 s.
    assert_eq!(terminated, [9, 28]);
    assert_eq!(rig.daemon.stats().timeouts, 2);
    assert_eq!(rig.executor.max_concurrent_runs_of_one_plugin(), 1);
    assert!(rig.sink.lines().iter().all(|l| l.contains("SOC_NES: agentd: ")));
}

#[test]
fn nonzero_exit_discards_output_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut rig = rig(&dir);
    rig.executor.script(pid(8), "1.0", Script { stdout: "LOG: should not ship\nARY: x\n".into(), code: 3, duration: chrono::Duration::seconds(1) });
    rig.publish(&pid(8), "Broken", "1.0", 10);
    rig.advance(2);
    let lines = rig.sink.lines();
    assert_eq!(lines.len(), 1);
    assert!(lines[0].contains("agentd: plugin Broken") && lines[0].contains("exit code 3"));
    assert!(rig.manager.ar_calls().is_empty());
    assert_eq!(rig.daemon.runtimes()[0].failures, 1);
}

fn ar_rig(dir: &tempfile::TempDir, attempts: u32) -> Rig {
    let config = AgentConfig { ar_attempts: attempts, ..AgentConfig::default() };
    let rig = Rig::new(dir.path(), config, quiet());
    rig.executor.script(pid(9), "1.0", Script { stdout: "ARY: go\n".into(), code: 0, duration: chrono::Duration::seconds(1) });
    rig.publish(&pid(9), "Responder", "1.0", 60);
    rig
}

#[test]
fn transient_ar_failure_is_retried() {
    let dir = tempfile::tempdir().unwrap();
    let mut rig = ar_rig(&dir, 3);
    rig.manager.fail_active_responses([ApiFailure::Unreachable("refused".into())]);
    rig.advance(2);
    assert_eq!(rig.manager.ar_calls().len(), 2);
    assert_eq!(rig.daemon.stats().ar_delivered, 1);
    assert!(!rig.daemon.config().ar_dead_letters().exists());
}

#[test]
fn rejected_ar_is_not_retried_and_not_dead_lettered() {
    for status in [400u16, 409, 422, 504] {
        let dir = tempfile::tempdir().unwrap();
        let mut rig = ar_rig(&dir, 3);
        rig.manager.fail_active_responses([ApiFailure::Rejected { status, kind: "X".into(), message: "no".into() }]);
        rig.advance(2);
        assert_eq!(rig.manager.ar_calls().len(), 1, "status {status}");
        assert_eq!(rig.daemon.stats().ar_failed, 1);
        assert!(!rig.daemon.config().ar_dead_letters().exists());
        assert!(std::fs::read_to_string(rig.daemon.config().ar_log()).unwrap().contains("\"delivered\":false"));
    }
}

#[test]
fn exhausted_ar_retries_are_dead_lettered() {
    let dir = tempfile::tempdir().unwrap();
    let mut rig = ar_rig(&dir, 3);
    rig.manager.fail_active_responses((0..3).map(|_| ApiFailure::Rejected { status: 500, kind: "Storage".into(), message: "disk".into() }));
    rig.advance(2);
    assert_eq!(rig.manager.ar_calls().len(), 3);
    let dead = std::fs::read_to_string(rig.daemon.config().ar_dead_letters()).unwrap();
    assert_eq!(dead.lines().count(), 1);
    assert!(dead.contains("\"args\":[\"go\"]"));
}

#[test]
fn unreachable_manager_keeps_current_runtimes() {
    let dir = tempfile::tempdir().unwrap();
    let mut rig = rig(&dir);
    rig.publish(&pid(1), "Probe", "1.0", 5);
    rig.tick();
    rig.manager.set_down(true);
    rig.advance(20);
    assert_eq!(rig.runtime_set().len(), 1);
    assert!(rig.daemon.stats().poll_failures >= 6);
    assert!(started(&rig, &pid(1)).len() > 1, "keeps running while the manager is away");
}

#[derive(Debug, Clone)]
enum Mutation {
    Publish { plugin: u8, version: u8, interval: u32 },
    Withdraw { plugin: u8 },
    Wait { seconds: u32 },
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        (0u8..4, 0u8..4, 2u32..12).prop_map(|(plugin, version, interval)| Mutation::Publish { plugin, version, interval }),
        (0u8..4).prop_map(|plugin| Mutation::Withdraw { plugin }),
        (0u32..5).prop_map(|seconds| Mutation::Wait { seconds }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn runtime_set_converges_within_two_polls(steps in prop::collection::vec(mutation(), 1..12), run_secs in 1i64..15) {
        let dir = tempfile::tempdir().unwrap();
        let poll = 3;
        let config = AgentConfig { poll_interval: poll, ..AgentConfig::default() };
        let mut rig = Rig::new(dir.path(), config, Script { duration: chrono::Duration::seconds(run_secs), ..quiet() });
        rig.tick();
        for step in steps {
            let before = rig.runtime_set();
            match step {
                Mutation::Publish { plugin, version, interval } => rig.publish(&pid(plugin), "Mut", &format!("1.{version}"), interval),
                Mutation::Withdraw { plugin } => rig.withdraw(&pid(plugin)),
                Mutation::Wait { seconds } => { rig.advance(seconds); continue; }
            }
            let desired = rig.desired_set();
            rig.advance(2 * poll as u32);
            prop_assert_eq!(&rig.runtime_set(), &desired);
            prop_assert!(rig.executor.max_concurrent_runs_of_one_plugin() <= 1);
            for (id, old) in &before {
                if desired.get(id).is_some_and(|new| new != old) || !desired.contains_key(id) {
                    prop_assert_eq!(rig.executor.alive().get(id).copied().unwrap_or(0) <= 1, true);
                    let old_alive = rig.executor.events().iter().rev().find_map(|e| match e {
                        RunEvent::Started { plugin, version, .. } if plugin == id && version == old => Some(false),
                        RunEvent::Finished { plugin, version, .. } | RunEvent::Terminated { plugin, version, .. } if plugin == id && version == old => Some(true),
                        _ => None,
                    });
                    prop_assert_ne!(old_alive, Some(false), "old version still running");
                }
            }
        }
    }
}
