//! Plugins bundled for demonstrations and end-to-end scenarios.

use super::{parse_metadata, PluginPackage, ServerParts};

macro_rules! sample {
    ($dir:literal) => {
        PluginPackage {
            metadata: parse_metadata(include_str!(concat!("samples/", $dir, "/metadata.json")))
                .expect("bundled metadata parses"),
            script: include_str!(concat!("samples/", $dir, "/script.py")).to_string(),
            server: Some(ServerParts {
                decoders: include_str!(concat!("samples/", $dir, "/decoders.xml")).to_string(),
                rules: include_str!(concat!("samples/", $dir, "/rules.xml")).to_string(),
                active_response: include_str!(concat!("samples/", $dir, "/active-response/script.py")).to_string(),
            }),
        }
    };
}

/// Reads of `/etc/passwd` raise level 10; reads of `/etc/shadow` raise
/// level 15 and ask for a quarantine.
pub fn zeroday_file_watch() -> PluginPackage {
    sample!("zeroday")
}

/// Plugin `0bab811d`: one LOG and one `ARY: Arg1 Arg2 Arg3` per run.
pub fn showcase_probe() -> PluginPackage {
    sample!("showcase_probe")
}

/// Plugin `3cd6bbc9`, imported already enabled for agent 002.
pub fn host_inventory() -> PluginPackage {
    sample!("host_inventory")
}

pub fn by_name(name: &str) -> Option<PluginPackage> {
    match name {
        "zeroday" | "ZerodayFileWatch" => Some(zeroday_file_watch()),
        "showcase" | "ShowcaseProbe" => Some(showcase_probe()),
        "inventory" | "HostInventory" => Some(host_inventory()),
        _ => None,
    }
}

pub const NAMES: [&str; 3] = ["zeroday", "showcase", "inventory"];
