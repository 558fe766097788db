//! Delivery of log lines to the manager's ingest listener.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::net::TcpStream;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use soc_core::AgentId;

pub trait LogSink: Send + Sync {
    /// Queue one complete Syslog line (no trailing newline).
    fn ship(&self, line: &str);
}

/// Keeps everything; used by tests and the simulator.
#[derive(Default)]
pub struct MemorySink {
    lines: Mutex<Vec<String>>,
}

impl MemorySink {
    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().unwrap().clone()
    }

    pub fn take(&self) -> Vec<String> {
        std::mem::take(&mut *self.lines.lock().unwrap())
    }
}

impl LogSink for MemorySink {
    fn ship(&self, line: &str) {
        self.lines.lock().unwrap().push(line.to_string());
    }
}

/// Appends every shipped line to a local file before passing it on.
pub struct MirroredSink {
    inner: Arc<dyn LogSink>,
    file: Mutex<Option<File>>,
}

impl MirroredSink {
    pub fn new(inner: Arc<dyn LogSink>, mirror: &Path) -> Self {
        let file = OpenOptions::new().create(true).append(true).open(mirror);
        if let Err(e) = &file {
            log::warn!("cannot open {}: {e}", mirror.display());
        }
        Self { inner, file: Mutex::new(file.ok()) }
    }
}

impl LogSink for MirroredSink {
    fn ship(&self, line: &str) {
        if let Some(f) = self.file.lock().unwrap().as_mut() {
            let _ = writeln!(f, "{line}");
        }
        self.inner.ship(line);
    }
}

#[derive(Default)]
struct Queue {
    lines: VecDeque<String>,
    dropped: u64,
    in_flight: bool,
}

struct Shared {
    queue: Mutex<Queue>,
    changed: Condvar,
    stop: AtomicBool,
    capacity: usize,
}

/// Persistent TCP connection with a bounded replay buffer. When the buffer
/// is full the oldest line is dropped; the drop count is reported on the
/// next successful connection.
pub struct TcpShipper {
    shared: Arc<Shared>,
    worker: Mutex<Option<thread::JoinHandle<()>>>,
}

impl TcpShipper {
    pub fn start(addr: String, agent: AgentId, capacity: usize, hostname: String, username: String) -> Self {
        let shared = Arc::new(Shared {
            queue: Mutex::default(),
            changed: Condvar::new(),
            stop: AtomicBool::new(false),
            capacity: capacity.max(1),
        });
        let worker_shared = Arc::clone(&shared);
        let worker = thread::Builder::new()
            .name("log-shipper".into())
            .spawn(move || pump(&addr, &agent, &worker_shared, &hostname, &username))
            .expect("spawn shipper");
        Self { shared, worker: Mutex::new(Some(worker)) }
    }

    pub fn buffered(&self) -> usize {
        self.shared.queue.lock().unwrap().lines.len()
    }

    pub fn dropped(&self) -> u64 {
        self.shared.queue.lock().unwrap().dropped
    }

    /// Wait until every queued line has been written, or `limit` passes.
    pub fn flush(&self, limit: Duration) -> bool {
        let deadline = Instant::now() + limit;
        let mut q = self.shared.queue.lock().unwrap();
        while !q.lines.is_empty() || q.in_flight {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            q = self.shared.changed.wait_timeout(q, deadline - now).unwrap().0;
        }
        true
    }

    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        self.shared.changed.notify_all();
        if let Some(w) = self.worker.lock().unwrap().take() {
            let _ = w.join();
        }
    }
}

impl Drop for TcpShipper {
    fn drop(&mut self) {
        self.stop();
    }
}

impl LogSink for TcpShipper {
    fn ship(&self, line: &str) {
        let mut q = self.shared.queue.lock().unwrap();
        if q.lines.len() >= self.shared.capacity {
            q.lines.pop_front();
            q.dropped += 1;
        }
        q.lines.push_back(line.to_string());
        drop(q);
        self.shared.changed.notify_all();
    }
}

fn connect(addr: &str, agent: &AgentId) -> io::Result<BufWriter<TcpStream>> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let mut w = BufWriter::new(stream);
    writeln!(w, "{}{agent}", crate::HELLO)?;
    w.flush()?;
    Ok(w)
}

fn pump(addr: &str, agent: &AgentId, shared: &Shared, hostname: &str, username: &str) {
    let mut conn: Option<BufWriter<TcpStream>> = None;
    let mut backoff = Duration::from_millis(50);
    while !shared.stop.load(Ordering::SeqCst) {
        if conn.is_none() {
            match connect(addr, agent) {
                Ok(c) => {
                    conn = Some(c);
                    backoff = Duration::from_millis(50);
                }
                Err(e) => {
                    log::debug!("ingest connect to {addr} failed: {e}");
                    let q = shared.queue.lock().unwrap();
                    let _ = shared.changed.wait_timeout(q, backoff).unwrap();
                    backoff = (backoff * 2).min(Duration::from_secs(5));
                    continue;
                }
            }
        }
        // Take a batch while leaving it visible as in flight.
        let (batch, dropped) = {
            let mut q = shared.queue.lock().unwrap();
            while q.lines.is_empty() && q.dropped == 0 && !shared.stop.load(Ordering::SeqCst) {
                q = shared.changed.wait_timeout(q, Duration::from_millis(200)).unwrap().0;
            }
            let batch: Vec<String> = q.lines.drain(..).collect();
            let dropped = std::mem::take(&mut q.dropped);
            q.in_flight = true;
            (batch, dropped)
        };
        let writer = conn.as_mut().expect("connected");
        let mut result = Ok(());
        if dropped > 0 {
            let note = soc_core::engine::syslog::format_syslog_line(
                chrono::Utc::now().naive_utc(),
                hostname,
                username,
                &soc_core::engine::syslog::envelope(
                    soc_core::engine::syslog::AGENTD_PLUGIN,
                    &format!("ship buffer overflow, {dropped} lines dropped"),
                ),
            );
            result = writeln!(writer, "{note}");
        }
        let mut sent = 0;
        for line in &batch {
            if result.is_err() {
                break;
            }
            result = writeln!(writer, "{line}");
            if result.is_ok() {
                sent += 1;
            }
        }
        if result.is_ok() {
            result = writer.flush();
        }
        let mut q = shared.queue.lock().unwrap();
        q.in_flight = false;
        if let Err(e) = result {
            log::debug!("ingest connection lost: {e}");
            conn = None;
            // Put back what may not have made it, ahead of anything newer.
            let unsent = if sent == batch.len() { &batch[..0] } else { &batch[..] };
            for line in unsent.iter().rev() {
                q.lines.push_front(line.clone());
            }
            while q.lines.len() > shared.capacity {
                q.lines.pop_front();
                q.dropped += 1;
            }
        }
        drop(q);
        shared.changed.notify_all();
    }
}
