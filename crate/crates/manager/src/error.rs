use std::io;

use soc_core::engine::EngineError;
use soc_core::package::{MetadataError, PackageError};
use soc_core::{AgentId, PluginId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error("plugin {0} is already registered")]
    DuplicatePlugin(PluginId),
    #[error("no plugin with id `{0}`")]
    UnknownPlugin(String),
    #[error("no agent with id `{0}`")]
    UnknownAgent(String),
    #[error("agent {0} is already enrolled")]
    DuplicateAgent(AgentId),
    #[error("no free agent ids left")]
    AgentIdsExhausted,
    #[error("package rejected: {0}")]
    Validation(#[from] PackageError),
    #[error("package rejected: imports must be full packages")]
    NotFull,
    #[error("metadata rejected: {0}")]
    Metadata(#[from] MetadataError),
    #[error("metadata id {got} does not match plugin {expected}")]
    IdMismatch { expected: PluginId, got: PluginId },
    #[error("plugin {0} is already enabled")]
    AlreadyEnabled(PluginId),
    #[error("plugin {0} is not enabled")]
    NotEnabled(PluginId),
    #[error("plugin {0} is disabled")]
    PluginDisabled(PluginId),
    #[error("plugin {plugin} cannot be enabled: {source}")]
    FragmentParse { plugin: PluginId, source: EngineError },
    #[error("active-response argument `{0}` is empty or contains whitespace")]
    BadArgument(String),
    #[error("active response for {0} timed out")]
    ExecutionTimeout(PluginId),
    #[error("active response for {plugin} exited with {code:?}")]
    ExecutionFailure { plugin: PluginId, code: Option<i32> },
    #[error("no alert with id {0}")]
    UnknownAlert(u64),
    #[error("no ticket with id {0}")]
    UnknownTicket(u64),
    #[error("ticket {0} is already closed")]
    AlreadyClosed(u64),
    #[error("bad filter: {0}")]
    BadFilter(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("storage error: {0}")]
    Storage(#[from] io::Error),
}

impl ManagerError {
    /// Stable kind string used in API error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::DuplicatePlugin(_) => "DuplicatePlugin",
            Self::UnknownPlugin(_) => "UnknownPlugin",
            Self::UnknownAgent(_) => "UnknownAgent",
            Self::DuplicateAgent(_) => "DuplicateAgent",
            Self::AgentIdsExhausted => "AgentIdsExhausted",
            Self::Validation(_) | Self::NotFull => "ValidationError",
            Self::Metadata(_) => "InvariantViolation",
            Self::IdMismatch { .. } => "IdMismatch",
            Self::AlreadyEnabled(_) => "AlreadyEnabled",
            Self::NotEnabled(_) => "NotEnabled",
            Self::PluginDisabled(_) => "PluginDisabled",
            Self::FragmentParse { .. } => "FragmentParseError",
            Self::BadArgument(_) => "BadArgument",
            Self::ExecutionTimeout(_) => "ExecutionTimeout",
            Self::ExecutionFailure { .. } => "ExecutionFailure",
            Self::UnknownAlert(_) => "UnknownAlert",
            Self::UnknownTicket(_) => "UnknownTicket",
            Self::AlreadyClosed(_) => "AlreadyClosed",
            Self::BadFilter(_) => "BadFilter",
            Self::BadRequest(_) => "BadRequest",
            Self::Storage(_) => "StorageError",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            Self::UnknownPlugin(_) | Self::UnknownAgent(_) | Self::UnknownAlert(_) | Self::UnknownTicket(_) => 404,
            Self::DuplicatePlugin(_)
            | Self::DuplicateAgent(_)
            | Self::AlreadyEnabled(_)
            | Self::NotEnabled(_)
            | Self::PluginDisabled(_)
            | Self::AlreadyClosed(_) => 409,
            Self::Validation(_)
            | Self::NotFull
            | Self::Metadata(_)
            | Self::IdMismatch { .. }
            | Self::FragmentParse { .. }
            | Self::BadArgument(_)
            | Self::BadFilter(_)
            | Self::BadRequest(_) => 400,
            Self::ExecutionFailure { .. } => 422,
            Self::ExecutionTimeout(_) => 504,
            Self::AgentIdsExhausted | Self::Storage(_) => 500,
        }
    }
}

pub type Result<T, E = ManagerError> = std::result::Result<T, E>;
