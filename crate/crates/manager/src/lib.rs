//! The manager: plugin registry, analysis pipeline, ticketing and
//! active-response execution behind an HTTP API and a TCP log listener.

pub mod alerts;
pub mod api;
pub mod builtin;
pub mod composite;
pub mod config;
pub mod error;
pub mod ingest;
pub mod layout;
pub mod reputation;
pub mod service;
pub mod tickets;

pub use api::ApiServer;
pub use config::ManagerConfig;
pub use error::{ManagerError, Result};
pub use ingest::IngestServer;
pub use service::{Manager, ScanRecord, Services};
