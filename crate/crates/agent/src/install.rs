//! Host-scheduler registration, reduced to a descriptor file.

use std::fs;
use std::io;
use std::path::PathBuf;

use crate::config::AgentConfig;

pub const DESCRIPTOR_NAME: &str = "soc_plugin_system";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstallMode {
    Startup,
    Delstartup,
}

impl InstallMode {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw {
            "startup" => Some(Self::Startup),
            "delstartup" => Some(Self::Delstartup),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("DescriptorWriteFailure: {path}: {source}")]
pub struct DescriptorWriteFailure {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

pub fn descriptor_path(config: &AgentConfig) -> PathBuf {
    config.descriptor_dir.join(DESCRIPTOR_NAME)
}

/// Render the descriptor. `launch` is the full command line that starts the daemon.
pub fn descriptor_text(config: &AgentConfig, launch: &str) -> String {
    format!(
        "# host scheduler entry for the plugin daemon\nname = \"{DESCRIPTOR_NAME}\"\nagent_id = \"{}\"\nexec = \"{}\"\nrestart = \"always\"\n",
        config.agent_id,
        launch.replace('\\', "\\\\").replace('"', "\\\"")
    )
}

pub fn install_daemon(config: &AgentConfig, mode: InstallMode, launch: &str) -> Result<(), DescriptorWriteFailure> {
    let path = descriptor_path(config);
    let fail = |path: PathBuf| move |source| DescriptorWriteFailure { path, source };
    match mode {
        InstallMode::Startup => {
            for dir in [config.shared_dir(), config.download_dir()] {
                fs::create_dir_all(&dir).map_err(fail(dir.clone()))?;
            }
            fs::create_dir_all(&config.descriptor_dir).map_err(fail(config.descriptor_dir.clone()))?;
            fs::write(&path, descriptor_text(config, launch)).map_err(fail(path.clone()))
        }
        InstallMode::Delstartup => match fs::remove_file(&path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(fail(path.clone())(e)),
        },
    }
}
