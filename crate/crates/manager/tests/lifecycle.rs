mod common;

use std::collections::BTreeSet;
use std::fs;

use common::*;
use proptest::prelude::*;
use soc_core::package::{member_names, samples, template_package, PackageSize, SCRIPT};
use soc_core::wire::{parse_flag_file, FlagEntry};
use soc_core::{AgentId, PluginId, Version};
use soc_manager::{Manager, ManagerError};

fn flags(m: &Manager, a: &str) -> Vec<FlagEntry> {
    m.flag_file(a).unwrap()
}

fn flag_on_disk(m: &Manager, a: &str) -> Vec<FlagEntry> {
    parse_flag_file(&fs::read_to_string(m.layout().flag_file(&agent(a))).unwrap()).unwrap()
}

fn enable(m: &Manager, id: &str) {
    let mut meta = m.get_metadata(id).unwrap();
    meta.enabled = true;
    m.update_metadata(id, meta).unwrap();
}

const FIG12: &str = "0bab811ddc3345b8970be15ef64cb12d";

#[test]
fn empty_registry_lists_nothing() {
    let h = harness();
    assert!(h.manager.list_plugins().is_empty());
    assert_eq!(h.manager.local_documents(), (String::new(), String::new()));
}

#[test]
fn import_disabled_template_stores_files_only() {
    let h = harness();
    let meta = h.manager.import_plugin(&full_zip(&template_package())).unwrap();
    assert_eq!(meta.id.as_str(), FIG12);
    assert!(!meta.enabled);
    let dir = h.manager.layout().plugin_dir(&meta.id);
    for member in PackageSize::Full.members() {
        assert!(dir.join(member).is_file(), "{member}");
    }
    assert_eq!(h.manager.local_documents(), (String::new(), String::new()));
    assert!(!h.manager.layout().ar_script(&meta.id).exists());
    assert!(flags(&h.manager, "001").is_empty());
    assert_eq!(h.manager.list_plugins(), vec![meta]);
}

#[test]
fn duplicate_import_is_rejected() {
    let h = harness();
    let zip = full_zip(&template_package());
    h.manager.import_plugin(&zip).unwrap();
    assert!(matches!(h.manager.import_plugin(&zip), Err(ManagerError::DuplicatePlugin(_))));
}

#[test]
fn minimal_import_is_rejected() {
    let h = harness();
    let zip = soc_core::package::pack(&template_package(), PackageSize::Minimal).unwrap();
    assert!(matches!(h.manager.import_plugin(&zip), Err(ManagerError::NotFull)));
    let err = h.manager.import_plugin(b"not a zip").unwrap_err();
    assert_eq!(err.kind(), "ValidationError");
}

#[test]
fn enabled_import_installs_in_the_same_call() {
    let h = harness();
    let meta = h.manager.import_plugin(&full_zip(&samples::host_inventory())).unwrap();
    assert!(meta.enabled);
    let (decoders, rules) = h.manager.local_documents();
    assert!(decoders.contains("host_inventory"));
    assert!(rules.contains("100031"));
    assert!(h.manager.layout().ar_script(&meta.id).is_file());
    assert_eq!(flag_on_disk(&h.manager, "002"), vec![FlagEntry { id: meta.id.clone(), version: "0.1.0".into() }]);
}

#[test]
fn enabling_publishes_flag_files_for_listed_agents() {
    let h = harness();
    h.manager.import_plugin(&full_zip(&template_package())).unwrap();
    enable(&h.manager, FIG12);
    for a in ["001", "002"] {
        let entries = flag_on_disk(&h.manager, a);
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].id.as_str(), FIG12);
        assert_eq!(entries[0].version, "0.0.1");
    }
    assert!(flag_on_disk(&h.manager, "003").is_empty());
    assert_eq!(fs::read_to_string(h.manager.layout().ar_script(&PluginId::parse(FIG12).unwrap())).unwrap(),
        soc_core::package::TEMPLATE_ACTIVE_RESPONSE);
    let (decoders, rules) = h.manager.local_documents();
    assert_eq!(decoders.matches("<!-- BEGIN plugin").count(), 1);
    assert_eq!(rules.matches("id=\"100001\"").count(), 1);
}

#[test]
fn version_bump_while_enabled_republishes() {
    let h = harness();
    h.manager.import_plugin(&full_zip(&template_package())).unwrap();
    enable(&h.manager, FIG12);
    let mut meta = h.manager.get_metadata(FIG12).unwrap();
    meta.version = Version::parse("0.0.2").unwrap();
    h.manager.update_metadata(FIG12, meta).unwrap();
    for a in ["001", "002"] {
        assert_eq!(flag_on_disk(&h.manager, a)[0].version, "0.0.2");
    }
}

#[test]
fn agent_list_change_moves_the_entry() {
    let h = harness();
    h.manager.import_plugin(&full_zip(&template_package())).unwrap();
    enable(&h.manager, FIG12);
    let before_002 = fs::read(h.manager.layout().flag_file(&agent("002"))).unwrap();
    let mut meta = h.manager.get_metadata(FIG12).unwrap();
    meta.agents = vec![agent("002"), agent("003")];
    let (_, diff) = h.manager.update_metadata(FIG12, meta).unwrap();
    assert_eq!(diff.remove, BTreeSet::from([agent("001")]));
    assert_eq!(diff.install, BTreeSet::from([agent("003")]));
    assert!(flag_on_disk(&h.manager, "001").is_empty());
    assert_eq!(flag_on_disk(&h.manager, "003").len(), 1);
    assert_eq!(fs::read(h.manager.layout().flag_file(&agent("002"))).unwrap(), before_002);
}

#[test]
fn update_requires_matching_id() {
    let h = harness();
    h.manager.import_plugin(&full_zip(&template_package())).unwrap();
    let other = samples::host_inventory().metadata;
    assert!(matches!(h.manager.update_metadata(FIG12, other), Err(ManagerError::IdMismatch { .. })));
    let meta = h.manager.get_metadata(FIG12).unwrap();
    assert!(matches!(
        h.manager.update_metadata("ffffffffffffffffffffffffffffffff", meta),
        Err(ManagerError::IdMismatch { .. })
    ));
}

#[test]
fn second_enable_reports_already_enabled() {
    let h = harness();
    h.manager.import_plugin(&full_zip(&template_package())).unwrap();
    h.manager.enable_plugin(FIG12).unwrap();
    let docs = h.manager.local_documents();
    assert!(matches!(h.manager.enable_plugin(FIG12), Err(ManagerError::AlreadyEnabled(_))));
    assert_eq!(h.manager.local_documents(), docs);
}

#[test]
fn uncompilable_fragment_leaves_state_untouched() {
    let h = harness();
    let mut pkg = template_package();
    // Clashes with the built-in sshd rule id.
    pkg.server.as_mut().unwrap().rules = pkg.server.as_ref().unwrap().rules.replace("100001", "5716");
    let meta = h.manager.import_plugin(&full_zip(&pkg)).unwrap();
    let err = h.manager.enable_plugin(meta.id.as_str()).unwrap_err();
    assert_eq!(err.kind(), "FragmentParseError");
    assert!(!h.manager.get_metadata(FIG12).unwrap().enabled);
    assert_eq!(h.manager.local_documents(), (String::new(), String::new()));
    assert!(!h.manager.layout().ar_script(&meta.id).exists());
    assert!(flags(&h.manager, "001").is_empty());

    // Imported already enabled: nothing is kept at all.
    pkg.metadata.enabled = true;
    pkg.metadata.id = PluginId::parse("aaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaa").unwrap();
    assert_eq!(h.manager.import_plugin(&full_zip(&pkg)).unwrap_err().kind(), "FragmentParseError");
    assert!(!h.manager.layout().plugin_dir(&pkg.metadata.id).exists());
    assert_eq!(h.manager.list_plugins().len(), 1);
}

#[test]
fn enable_then_disable_is_identity() {
    let h = harness();
    h.manager.import_plugin(&full_zip(&samples::host_inventory())).unwrap();
    h.manager.import_plugin(&full_zip(&template_package())).unwrap();
    let docs = h.manager.local_documents();
    let decoder_bytes = fs::read(h.manager.layout().local_decoders()).unwrap();
    let flag_bytes: Vec<_> = ["001", "002"].iter().map(|a| fs::read(h.manager.layout().flag_file(&agent(a))).unwrap()).collect();
    h.manager.enable_plugin(FIG12).unwrap();
    assert_ne!(h.manager.local_documents(), docs);
    h.manager.disable_plugin(FIG12).unwrap();
    assert_eq!(h.manager.local_documents(), docs);
    assert_eq!(fs::read(h.manager.layout().local_decoders()).unwrap(), decoder_bytes);
    let after: Vec<_> = ["001", "002"].iter().map(|a| fs::read(h.manager.layout().flag_file(&agent(a))).unwrap()).collect();
    assert_eq!(after, flag_bytes);
    assert!(!h.manager.layout().ar_script(&PluginId::parse(FIG12).unwrap()).exists());
    assert_eq!(h.manager.local_documents(), h.manager.rebuilt_documents());
}

#[test]
fn disable_never_enabled_plugin_fails() {
    let h = harness();
    h.manager.import_plugin(&full_zip(&template_package())).unwrap();
    assert!(matches!(h.manager.disable_plugin(FIG12), Err(ManagerError::NotEnabled(_))));
}

#[test]
fn delete_enabled_plugin_cleans_everything() {
    let h = harness();
    h.manager.import_plugin(&full_zip(&template_package())).unwrap();
    enable(&h.manager, FIG12);
    h.manager.delete_plugin(FIG12).unwrap();
    assert!(flag_on_disk(&h.manager, "001").is_empty());
    assert_eq!(h.manager.local_documents(), (String::new(), String::new()));
    assert!(!h.manager.layout().plugin_dir(&PluginId::parse(FIG12).unwrap()).exists());
    assert!(matches!(h.manager.delete_plugin(FIG12), Err(ManagerError::UnknownPlugin(_))));
}

#[test]
fn delete_disabled_plugin_keeps_fragments() {
    let h = harness();
    h.manager.import_plugin(&full_zip(&samples::host_inventory())).unwrap();
    h.manager.import_plugin(&full_zip(&template_package())).unwrap();
    let docs = h.manager.local_documents();
    h.manager.delete_plugin(FIG12).unwrap();
    assert_eq!(h.manager.local_documents(), docs);
}

#[test]
fn export_sizes() {
    let h = harness();
    h.manager.import_plugin(&full_zip(&template_package())).unwrap();
    let minimal = h.manager.export_plugin(FIG12, PackageSize::Minimal).unwrap();
    assert_eq!(member_names(&minimal).unwrap(), vec!["metadata.json", SCRIPT]);
    let full = h.manager.export_plugin(FIG12, PackageSize::Full).unwrap();
    assert_eq!(member_names(&full).unwrap().len(), 5);
    assert!(matches!(h.manager.export_plugin("00000000000000000000000000000000", PackageSize::Full),
        Err(ManagerError::UnknownPlugin(_))));
}

#[test]
fn agent_002_flag_file_matches_the_two_plugin_example() {
    let h = harness();
    let mut probe = samples::showcase_probe();
    probe.metadata.enabled = true;
    h.manager.import_plugin(&full_zip(&probe)).unwrap();
    h.manager.import_plugin(&full_zip(&samples::host_inventory())).unwrap();
    let expected = parse_flag_file(
        r#"[ { "id": "0bab811ddc3345b8970be15ef64cb12d",
  "version": "0.0.1"},
  { "id": "3cd6bbc9ad8e4d908077f5a45462d647",
  "version": "0.1.0"}
]"#,
    )
    .unwrap();
    assert_eq!(flags(&h.manager, "002"), expected);
    assert_eq!(flag_on_disk(&h.manager, "002"), expected);
}

#[test]
fn unknown_agent_has_no_flag_file() {
    let h = harness();
    assert!(matches!(h.manager.flag_file("777"), Err(ManagerError::UnknownAgent(_))));
    assert!(matches!(h.manager.flag_file("abc"), Err(ManagerError::UnknownAgent(_))));
    assert!(flags(&h.manager, "003").is_empty());
}

#[test]
fn agents_named_by_plugins_become_known() {
    let h = harness();
    let mut pkg = template_package();
    pkg.metadata.enabled = true;
    pkg.metadata.agents = vec![agent("042")];
    h.manager.import_plugin(&full_zip(&pkg)).unwrap();
    assert_eq!(flags(&h.manager, "042").len(), 1);
}

#[test]
fn enrollment_assigns_free_ids() {
    let h = harness();
    let info = h.manager.enroll(soc_core::wire::Enrollment { id: None, name: "web-01".into() }).unwrap();
    assert_eq!(info.id.as_str(), "005");
    assert!(matches!(
        h.manager.enroll(soc_core::wire::Enrollment { id: Some(agent("005")), name: "x".into() }),
        Err(ManagerError::DuplicateAgent(_))
    ));
    assert!(flags(&h.manager, "005").is_empty());
}

#[test]
fn state_survives_a_restart() {
    let h = harness();
    h.manager.import_plugin(&full_zip(&samples::host_inventory())).unwrap();
    h.manager.import_plugin(&full_zip(&template_package())).unwrap();
    enable(&h.manager, FIG12);
    h.manager.enroll(soc_core::wire::Enrollment { id: Some(agent("010")), name: "db".into() }).unwrap();
    let docs = h.manager.local_documents();
    let plugins = h.manager.list_plugins();
    h.manager.shutdown();
    let mut cfg = config(&h.dir);
    cfg.agents.clear();
    let reopened = Manager::open(cfg).unwrap();
    assert_eq!(reopened.local_documents(), docs);
    assert_eq!(reopened.list_plugins(), plugins);
    assert_eq!(reopened.flag_file("002").unwrap().len(), 2);
    assert!(reopened.flag_file("010").unwrap().is_empty());
    assert_eq!(reopened.engine().rules().len(), h.manager.engine().rules().len());
}

// ---- randomized lifecycle -------------------------------------------------

#[derive(Debug, Clone)]
enum Op {
    Import(usize, bool),
    Enable(usize),
    Disable(usize),
    SetAgents(usize, Vec<u16>),
    Bump(usize),
    Delete(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..4usize, any::<bool>()).prop_map(|(p, e)| Op::Import(p, e)),
        (0..4usize).prop_map(Op::Enable),
        (0..4usize).prop_map(Op::Disable),
        (0..4usize, proptest::collection::vec(1..=5u16, 0..4)).prop_map(|(p, a)| Op::SetAgents(p, a)),
        (0..4usize).prop_map(Op::Bump),
        (0..4usize).prop_map(Op::Delete),
    ]
}

fn nth_plugin(n: usize) -> soc_core::package::PluginPackage {
    let mut pkg = template_package();
    pkg.metadata.id = PluginId::parse(&format!("{:032x}", 0xabc0 + n)).unwrap();
    pkg.metadata.name = format!("P{n}");
    let server = pkg.server.as_mut().unwrap();
    server.decoders = server.decoders.replace("DecoderNameForThePlugin", &format!("dec_{n}"));
    server.rules = server.rules.replace("DecoderNameForThePlugin", &format!("dec_{n}")).replace("100001", &format!("{}", 100100 + n));
    pkg
}

fn check_invariants(m: &Manager) {
    assert_eq!(m.local_documents(), m.rebuilt_documents());
    let plugins = m.list_plugins();
    for a in 1..=5u16 {
        let a = AgentId::from_number(a).unwrap();
        let published = parse_flag_file(&fs::read_to_string(m.layout().flag_file(&a)).unwrap_or_else(|_| "[]".into())).unwrap();
        let expected: Vec<FlagEntry> = plugins
            .iter()
            .filter(|p| p.enabled && p.agents.contains(&a))
            .map(|p| FlagEntry { id: p.id.clone(), version: p.version.as_str().into() })
            .collect();
        assert_eq!(published, expected, "agent {a}");
    }
    for p in &plugins {
        assert_eq!(m.layout().ar_script(&p.id).exists(), p.enabled);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn random_lifecycles_keep_documents_and_flags_consistent(ops in proptest::collection::vec(op(), 1..25)) {
        let h = harness();
        let m = &h.manager;
        for op in ops {
            let _ = match op {
                Op::Import(n, enabled) => {
                    let mut pkg = nth_plugin(n);
                    pkg.metadata.enabled = enabled;
                    m.import_plugin(&full_zip(&pkg)).map(|_| ())
                }
                Op::Enable(n) => m.enable_plugin(nth_plugin(n).metadata.id.as_str()).map(|_| ()),
                Op::Disable(n) => {
                    let id = nth_plugin(n).metadata.id;
                    let r = m.disable_plugin(id.as_str()).map(|_| ());
                    if r.is_ok() {
                        let disabled = m.local_documents();
                        m.enable_plugin(id.as_str()).unwrap();
                        m.disable_plugin(id.as_str()).unwrap();
                        prop_assert_eq!(m.local_documents(), disabled);
                    }
                    r
                }
                Op::SetAgents(n, agents) => {
                    let id = nth_plugin(n).metadata.id;
                    match m.get_metadata(id.as_str()) {
                        Ok(mut meta) => {
                            let set: BTreeSet<u16> = agents.into_iter().collect();
                            meta.agents = set.into_iter().map(|a| AgentId::from_number(a).unwrap()).collect();
                            m.update_metadata(id.as_str(), meta).map(|_| ())
                        }
                        Err(e) => Err(e),
                    }
                }
                Op::Bump(n) => {
                    let id = nth_plugin(n).metadata.id;
                    match m.get_metadata(id.as_str()) {
                        Ok(mut meta) => {
                            meta.version = Version::parse(&format!("{}.1", meta.version.as_str())).unwrap();
                            m.update_metadata(id.as_str(), meta).map(|_| ())
                        }
                        Err(e) => Err(e),
                    }
                }
                Op::Delete(n) => m.delete_plugin(nth_plugin(n).metadata.id.as_str()),
            };
            check_invariants(m);
        }
    }
}
