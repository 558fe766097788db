//! Plugin packages: the zip archives exchanged between engineers, the
//! manager and the agents.
//!
//! A FULL package carries all five members; a MINIMAL one only
//! `metadata.json` and `script.py`, which is all an agent needs.

pub mod metadata;
pub mod samples;

use std::io::{Cursor, Read, Write};

use thiserror::Error;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use crate::engine::{parse_decoders, parse_rules, DecoderDocError, RuleDocError};
pub use metadata::{parse_metadata, MetadataError, PluginMetadata};

pub const METADATA: &str = "metadata.json";
pub const SCRIPT: &str = "script.py";
pub const DECODERS: &str = "decoders.xml";
pub const RULES: &str = "rules.xml";
pub const ACTIVE_RESPONSE: &str = "active-response/script.py";
const ACTIVE_RESPONSE_DIR: &str = "active-response/";

/// Member names in archive order.
pub const FULL_MEMBERS: [&str; 5] = [METADATA, SCRIPT, DECODERS, RULES, ACTIVE_RESPONSE];
pub const MINIMAL_MEMBERS: [&str; 2] = [METADATA, SCRIPT];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PackageSize {
    Full,
    Minimal,
}

impl PackageSize {
    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "full" => Some(Self::Full),
            "minimal" => Some(Self::Minimal),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Minimal => "minimal",
        }
    }

    pub fn members(self) -> &'static [&'static str] {
        match self {
            Self::Full => &FULL_MEMBERS,
            Self::Minimal => &MINIMAL_MEMBERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PackageError {
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),
    #[error("archive is missing `{0}`")]
    MissingMember(String),
    #[error("archive has unexpected member `{0}`")]
    UnexpectedMember(String),
    #[error("member `{0}` is not UTF-8 text")]
    NotText(String),
    #[error(transparent)]
    Metadata(#[from] MetadataError),
    #[error("decoders.xml: {0}")]
    Decoders(#[from] DecoderDocError),
    #[error("rules.xml: {0}")]
    Rules(#[from] RuleDocError),
    #[error("a full export needs a full package")]
    NotFull,
}

/// The manager-side members of a FULL package.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerParts {
    pub decoders: String,
    pub rules: String,
    pub active_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PluginPackage {
    pub metadata: PluginMetadata,
    pub script: String,
    /// Present iff the package is FULL.
    pub server: Option<ServerParts>,
}

impl PluginPackage {
    pub fn size(&self) -> PackageSize {
        if self.server.is_some() {
            PackageSize::Full
        } else {
            PackageSize::Minimal
        }
    }

    /// The package as an export of `size` would carry it.
    pub fn restricted(&self, size: PackageSize) -> Self {
        match size {
            PackageSize::Full => self.clone(),
            PackageSize::Minimal => Self { server: None, ..self.clone() },
        }
    }

    /// `(name, contents)` for every member present, in archive order.
    pub fn members(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![(METADATA, self.metadata.to_json()), (SCRIPT, self.script.clone())];
        if let Some(server) = &self.server {
            out.push((DECODERS, server.decoders.clone()));
            out.push((RULES, server.rules.clone()));
            out.push((ACTIVE_RESPONSE, server.active_response.clone()));
        }
        out
    }
}

/// Read and check an archive.
pub fn validate_package(archive: &[u8]) -> Result<PluginPackage, PackageError> {
    let corrupt = |e: zip::result::ZipError| PackageError::CorruptArchive(e.to_string());
    let mut zip = ZipArchive::new(Cursor::new(archive)).map_err(corrupt)?;
    let mut found: [Option<String>; 5] = Default::default();
    for index in 0..zip.len() {
        let mut entry = zip.by_index(index).map_err(corrupt)?;
        let name = entry.name().map_err(corrupt)?.into_owned();
        if entry.is_dir() && name == ACTIVE_RESPONSE_DIR {
            continue;
        }
        let slot = FULL_MEMBERS
            .iter()
            .position(|m| *m == name)
            .ok_or_else(|| PackageError::UnexpectedMember(name.clone()))?;
        if found[slot].is_some() {
            return Err(PackageError::CorruptArchive(format!("duplicate member `{name}`")));
        }
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes).map_err(|e| PackageError::CorruptArchive(e.to_string()))?;
        found[slot] = Some(String::from_utf8(bytes).map_err(|_| PackageError::NotText(name.clone()))?);
    }

    assemble(found)
}

/// Read a plugin laid out as a directory, with the same checks as an archive.
/// Members that are absent are left out, so a directory holding only
/// `metadata.json` and `script.py` reads as a MINIMAL package.
pub fn read_dir(dir: &std::path::Path) -> Result<PluginPackage, PackageError> {
    let mut found: [Option<String>; 5] = Default::default();
    for (slot, name) in FULL_MEMBERS.iter().enumerate() {
        match std::fs::read(dir.join(name)) {
            Ok(bytes) => found[slot] = Some(String::from_utf8(bytes).map_err(|_| PackageError::NotText((*name).into()))?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(PackageError::CorruptArchive(format!("{}: {e}", dir.join(name).display()))),
        }
    }
    assemble(found)
}

fn assemble(found: [Option<String>; 5]) -> Result<PluginPackage, PackageError> {
    let [metadata, script, decoders, rules, active_response] = found;
    let metadata = metadata.ok_or_else(|| PackageError::MissingMember(METADATA.into()))?;
    let script = script.ok_or_else(|| PackageError::MissingMember(SCRIPT.into()))?;
    let metadata = parse_metadata(&metadata)?;

    let server = match (decoders, rules, active_response) {
        (None, None, None) => None,
        (decoders, rules, active_response) => {
            let missing = |name: &str| PackageError::MissingMember(name.into());
            let decoders = decoders.ok_or_else(|| missing(DECODERS))?;
            let rules = rules.ok_or_else(|| missing(RULES))?;
            let active_response = active_response.ok_or_else(|| missing(ACTIVE_RESPONSE))?;
            parse_decoders(&decoders)?;
            parse_rules(&rules)?;
            Some(ServerParts { decoders, rules, active_response })
        }
    };
    Ok(PluginPackage { metadata, script, server })
}

/// Write `package` as a reproducible archive.
pub fn pack(package: &PluginPackage, size: PackageSize) -> Result<Vec<u8>, PackageError> {
    if size == PackageSize::Full && package.server.is_none() {
        return Err(PackageError::NotFull);
    }
    let options = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .last_modified_time(DateTime::DEFAULT)
        .unix_permissions(0o644);
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let io = |e: std::io::Error| PackageError::CorruptArchive(e.to_string());
    for (name, contents) in package.restricted(size).members() {
        zip.start_file(name, options).map_err(|e| PackageError::CorruptArchive(e.to_string()))?;
        zip.write_all(contents.as_bytes()).map_err(io)?;
    }
    let cursor = zip.finish().map_err(|e| PackageError::CorruptArchive(e.to_string()))?;
    Ok(cursor.into_inner())
}

pub const TEMPLATE_METADATA: &str = include_str!("template/metadata.json");
pub const TEMPLATE_DECODERS: &str = include_str!("template/decoders.xml");
pub const TEMPLATE_RULES: &str = include_str!("template/rules.xml");
pub const TEMPLATE_SCRIPT: &str = include_str!("template/script.py");
pub const TEMPLATE_ACTIVE_RESPONSE: &str = include_str!("template/active_response.py");

pub fn template_package() -> PluginPackage {
    PluginPackage {
        metadata: parse_metadata(TEMPLATE_METADATA).expect("template metadata parses"),
        script: TEMPLATE_SCRIPT.to_string(),
        server: Some(ServerParts {
            decoders: TEMPLATE_DECODERS.to_string(),
            rules: TEMPLATE_RULES.to_string(),
            active_response: TEMPLATE_ACTIVE_RESPONSE.to_string(),
        }),
    }
}

/// The starter archive handed out to plugin authors.
pub fn make_template() -> Vec<u8> {
    pack(&template_package(), PackageSize::Full).expect("template packs")
}

/// Member names of an archive, in stored order.
pub fn member_names(archive: &[u8]) -> Result<Vec<String>, PackageError> {
    let corrupt = |e: zip::result::ZipError| PackageError::CorruptArchive(e.to_string());
    let zip = ZipArchive::new(Cursor::new(archive)).map_err(corrupt)?;
    zip.file_names().map(|name| name.map(|n| n.into_owned()).map_err(corrupt)).collect()
}
