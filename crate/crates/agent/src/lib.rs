//! Per-host plugin daemon: keeps the local plugin set in step with the
//! manager's flag file, runs each plugin on its interval, and ships logs.

pub mod client;
pub mod config;
pub mod daemon;
pub mod executor;
pub mod install;
pub mod monitor;
pub mod output;
pub mod shipper;
pub mod sim;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use soc_core::clock::{Clock, SystemClock};

pub use config::AgentConfig;
pub use daemon::{Collaborators, Daemon, DaemonEvent, DaemonStats, RuntimeView};

/// First bytes on every ingest connection, followed by the agent id.
pub const HELLO: &str = "AGENT ";

const TICK: Duration = Duration::from_millis(200);

/// Run against a live manager until `stop` is raised.
pub fn run(config: AgentConfig, stop: Arc<AtomicBool>) -> std::io::Result<DaemonStats> {
    let api = Arc::new(client::HttpManager::new(&config.manager_api, Duration::from_secs(10)));
    let shipper = Arc::new(shipper::TcpShipper::start(
        config.manager_ingest.clone(),
        config.agent_id.clone(),
        config.ship_buffer,
        config.hostname(),
        config.username(),
    ));
    std::fs::create_dir_all(&config.ossec_dir)?;
    let sink = Arc::new(shipper::MirroredSink::new(shipper.clone(), &config.plugin_syslog()));
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let parts = Collaborators {
        api,
        sink,
        executor: Arc::new(executor::ProcessExecutor::new(config.interpreter())),
        clock: clock.clone(),
    };
    let mut daemon = Daemon::new(config, parts)?;
    log::info!("agent {} running", daemon.config().agent_id);
    while !stop.load(Ordering::SeqCst) {
        daemon.tick(clock.now());
        std::thread::sleep(TICK);
    }
    daemon.shutdown();
    shipper.flush(Duration::from_secs(2));
    shipper.stop();
    Ok(daemon.stats().clone())
}
