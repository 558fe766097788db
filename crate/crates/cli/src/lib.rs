//! The `soc` command line and the scenario simulator behind `soc simulate`.

pub mod commands;
pub mod harness;
pub mod oracle;
pub mod scenario;

pub use commands::run;
