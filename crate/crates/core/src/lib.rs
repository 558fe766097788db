//! Shared building blocks for the SOC manager, agent and tooling.

pub mod clock;
pub mod engine;
pub mod ids;
pub mod package;
pub mod process;
pub mod version;
pub mod wire;

pub use ids::{AgentId, PluginId};
pub use version::{compare_versions, Version};
