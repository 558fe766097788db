//! Line-oriented TCP ingest. Each connection opens with `AGENT <id>`,
//! then carries one syslog line per newline.

use std::io::{self, BufRead, BufReader};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use soc_core::AgentId;

use crate::service::Manager;

pub const HELLO: &str = "AGENT ";

pub struct IngestServer {
    addr: SocketAddr,
}

impl IngestServer {
    /// Bind and serve in background threads for the lifetime of the process.
    pub fn spawn(manager: Arc<Manager>, addr: &str) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        thread::Builder::new().name("ingest-accept".into()).spawn(move || {
            for stream in listener.incoming() {
                match stream {
                    Ok(stream) => {
                        let manager = Arc::clone(&manager);
                        let _ = thread::Builder::new().name("ingest-conn".into()).spawn(move || {
                            if let Err(e) = serve_connection(&manager, stream) {
                                log::debug!("ingest connection ended: {e}");
                            }
                        });
                    }
                    Err(e) => log::warn!("ingest accept failed: {e}"),
                }
            }
        })?;
        Ok(Self { addr })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

fn serve_connection(manager: &Manager, stream: TcpStream) -> io::Result<()> {
    let mut reader = BufReader::new(stream);
    let mut hello = String::new();
    reader.read_line(&mut hello)?;
    let agent = hello.trim_end().strip_prefix(HELLO).and_then(|raw| AgentId::parse(raw.trim()).ok());
    let Some(agent) = agent else {
        manager.reject_connection();
        return Ok(());
    };
    if !manager.agent_connected(&agent) {
        return Ok(());
    }
    let result = pump(manager, &agent, reader);
    manager.agent_disconnected(&agent);
    result
}

fn pump(manager: &Manager, agent: &AgentId, mut reader: BufReader<TcpStream>) -> io::Result<()> {
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        let line = String::from_utf8_lossy(&buf);
        let line = line.trim_end_matches(['\n', '\r']);
        if !line.is_empty() {
            manager.ingest_line(agent, line);
        }
    }
}
