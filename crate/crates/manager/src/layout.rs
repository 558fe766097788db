//! On-disk layout under the manager's data root.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use soc_core::{AgentId, PluginId};

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn plugins_dir(&self) -> PathBuf {
        self.root.join("plugins")
    }

    pub fn plugin_dir(&self, id: &PluginId) -> PathBuf {
        self.plugins_dir().join(id.as_str())
    }

    pub fn shared_dir(&self) -> PathBuf {
        self.root.join("etc/shared/default/plugins")
    }

    pub fn flag_file(&self, agent: &AgentId) -> PathBuf {
        self.shared_dir().join(format!("{agent}.json"))
    }

    pub fn local_decoders(&self) -> PathBuf {
        self.root.join("etc/decoders/local_decoder.xml")
    }

    pub fn local_rules(&self) -> PathBuf {
        self.root.join("etc/rules/local_rules.xml")
    }

    /// Working directory for active-response runs.
    pub fn active_response_dir(&self) -> PathBuf {
        self.root.join("active-response")
    }

    pub fn ar_scripts_dir(&self) -> PathBuf {
        self.active_response_dir().join("plugins")
    }

    pub fn ar_script(&self, id: &PluginId) -> PathBuf {
        self.ar_scripts_dir().join(format!("{id}.py"))
    }

    fn var(&self, name: &str) -> PathBuf {
        self.root.join("var").join(name)
    }

    pub fn alerts_journal(&self) -> PathBuf {
        self.var("alerts.jsonl")
    }

    pub fn tickets_journal(&self) -> PathBuf {
        self.var("tickets.jsonl")
    }

    pub fn dead_letters(&self) -> PathBuf {
        self.var("dead_letters.jsonl")
    }

    pub fn ar_journal(&self) -> PathBuf {
        self.var("active_responses.jsonl")
    }

    pub fn unparsed_log(&self) -> PathBuf {
        self.var("unparsed.log")
    }

    pub fn agents_file(&self) -> PathBuf {
        self.root.join("etc/agents.json")
    }

    pub fn create_dirs(&self) -> io::Result<()> {
        for dir in [
            self.plugins_dir(),
            self.shared_dir(),
            self.ar_scripts_dir(),
            self.root.join("etc/decoders"),
            self.root.join("etc/rules"),
            self.root.join("var"),
        ] {
            fs::create_dir_all(dir)?;
        }
        Ok(())
    }
}

/// Replace `path` with `contents` via a sibling temp file and rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let parent = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = parent.join(format!(".{name}.tmp"));
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(contents)?;
        file.sync_data()?;
    }
    fs::rename(&tmp, path)
}

pub fn remove_if_exists(path: &Path) -> io::Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}
