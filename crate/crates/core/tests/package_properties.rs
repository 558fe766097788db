use proptest::prelude::*;
use serde_json::{Map, Value};

use soc_core::package::{
    pack, template_package, validate_package, PackageSize, PluginMetadata, PluginPackage, ServerParts,
};
use soc_core::{AgentId, PluginId, Version};

fn metadata() -> impl Strategy<Value = PluginMetadata> {
    (
        "[0-9a-f]{32}",
        ".{0,20}",
        ".{0,40}",
        prop::collection::vec(0u64..200, 1..4),
        any::<bool>(),
        1u32..100_000,
        prop::collection::btree_set(0u16..1000, 0..6),
        prop::option::of(".{0,10}"),
    )
        .prop_map(|(id, name, description, parts, enabled, interval, agents, runtime)| {
            let version = parts.iter().map(u64::to_string).collect::<Vec<_>>().join(".");
            let mut extra = Map::new();
            if let Some(runtime) = runtime {
                extra.insert("runtime".into(), Value::String(runtime));
            }
            PluginMetadata {
                id: PluginId::parse(&id).unwrap(),
                name,
                description,
                version: Version::parse(&version).unwrap(),
                enabled,
                interval,
                agents: agents.into_iter().map(|n| AgentId::from_number(n).unwrap()).collect(),
                extra,
                script_extra: Map::new(),
            }
        })
}

fn package() -> impl Strategy<Value = PluginPackage> {
    (metadata(), "(?s).{0,200}", any::<bool>(), "(?s).{0,80}").prop_map(|(metadata, script, full, ar)| {
        let template = template_package().server.unwrap();
        PluginPackage {
            metadata,
            script,
            server: full.then(|| ServerParts { active_response: ar, ..template }),
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pack_then_validate_restores_the_package(p in package(), minimal in any::<bool>()) {
        let size = if minimal || p.server.is_none() { PackageSize::Minimal } else { PackageSize::Full };
        let archive = pack(&p, size).unwrap();
        let back = validate_package(&archive).unwrap();
        prop_assert_eq!(&back, &p.restricted(size));
        prop_assert_eq!(back.size(), size);
        for ((n1, c1), (n2, c2)) in back.members().iter().zip(p.restricted(size).members().iter()) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(c1.as_bytes(), c2.as_bytes());
        }
        prop_assert_eq!(pack(&back, size).unwrap(), archive);
    }

    #[test]
    fn metadata_text_round_trips(m in metadata()) {
        let back = soc_core::package::parse_metadata(&m.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), m.to_json());
        prop_assert_eq!(back, m);
    }
}
