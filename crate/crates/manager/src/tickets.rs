//! Tickets and the webhook that announces them.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use soc_core::wire::{Ticket, TicketNotice, TicketStatus};

use crate::error::{ManagerError, Result};

/// Journal of ticket snapshots; the last snapshot of an id wins.
pub struct TicketStore {
    tickets: BTreeMap<u64, Ticket>,
    journal: Option<File>,
}

impl TicketStore {
    pub fn open(path: &Path) -> io::Result<Self> {
        let mut tickets = BTreeMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                match serde_json::from_str::<Ticket>(&line) {
                    Ok(t) => {
                        tickets.insert(t.id, t);
                    }
                    Err(e) if !line.trim().is_empty() => log::warn!("skipping ticket journal line: {e}"),
                    Err(_) => {}
                }
            }
        }
        let journal = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { tickets, journal: Some(journal) })
    }

    pub fn in_memory() -> Self {
        Self { tickets: BTreeMap::new(), journal: None }
    }

    fn record(&mut self, ticket: &Ticket) -> io::Result<()> {
        if let Some(journal) = self.journal.as_mut() {
            let mut line = serde_json::to_vec(ticket)?;
            line.push(b'\n');
            journal.write_all(&line)?;
        }
        self.tickets.insert(ticket.id, ticket.clone());
        Ok(())
    }

    pub fn create(&mut self, alert_id: u64, assignee: &str, now: NaiveDateTime) -> io::Result<Ticket> {
        let id = self.tickets.keys().next_back().map_or(1, |last| last + 1);
        let ticket = Ticket { id, alert_id, status: TicketStatus::Open, assignee: assignee.into(), created: now, closed: None };
        self.record(&ticket)?;
        Ok(ticket)
    }

    pub fn close(&mut self, id: u64, now: NaiveDateTime) -> Result<Ticket> {
        let mut ticket = self.tickets.get(&id).cloned().ok_or(ManagerError::UnknownTicket(id))?;
        if ticket.status == TicketStatus::Closed {
            return Err(ManagerError::AlreadyClosed(id));
        }
        ticket.status = TicketStatus::Closed;
        ticket.closed = Some(now);
        self.record(&ticket)?;
        Ok(ticket)
    }

    pub fn get(&self, id: u64) -> Option<&Ticket> {
        self.tickets.get(&id)
    }

    pub fn list(&self, status: Option<TicketStatus>) -> Vec<Ticket> {
        self.tickets.values().filter(|t| status.is_none_or(|s| t.status == s)).cloned().collect()
    }
}

/// Where webhook POSTs go.
pub trait WebhookTransport: Send + Sync {
    fn post(&self, url: &str, body: &str) -> std::result::Result<(), String>;
}

pub struct HttpWebhook {
    agent: ureq::Agent,
}

impl Default for HttpWebhook {
    fn default() -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(10))).build();
        Self { agent: config.into() }
    }
}

impl WebhookTransport for HttpWebhook {
    fn post(&self, url: &str, body: &str) -> std::result::Result<(), String> {
        self.agent
            .post(url)
            .header("Content-Type", "application/json")
            .send(body)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub ticket_id: u64,
    pub alert_id: u64,
    pub attempts: u32,
    pub delivered: bool,
    pub error: Option<String>,
}

struct Job {
    url: String,
    notice: TicketNotice,
}

#[derive(Default)]
struct Progress {
    pending: usize,
    deliveries: Vec<Delivery>,
}

/// Background delivery with bounded retries. The queue is bounded and
/// blocks producers when full.
pub struct Notifier {
    tx: Mutex<Option<SyncSender<Job>>>,
    progress: Arc<(Mutex<Progress>, Condvar)>,
    worker: Mutex<Option<thread::JoinHandle<()>>>,
}

pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff: Duration,
}

impl Notifier {
    pub fn start(transport: Arc<dyn WebhookTransport>, policy: RetryPolicy, dead_letters: Option<PathBuf>) -> Self {
        let (tx, rx) = mpsc::sync_channel::<Job>(1024);
        let progress: Arc<(Mutex<Progress>, Condvar)> = Arc::default();
        let shared = Arc::clone(&progress);
        let worker = thread::Builder::new()
            .name("ticket-webhook".into())
            .spawn(move || deliver_all(rx, transport, policy, dead_letters, shared))
            .expect("spawn webhook worker");
        Self { tx: Mutex::new(Some(tx)), progress, worker: Mutex::new(Some(worker)) }
    }

    pub fn enqueue(&self, url: &str, notice: TicketNotice) {
        self.progress.0.lock().unwrap().pending += 1;
        let sender = self.tx.lock().unwrap().clone();
        if let Some(tx) = sender {
            if tx.send(Job { url: url.into(), notice }).is_ok() {
                return;
            }
        }
        let (lock, cvar) = &*self.progress;
        lock.lock().unwrap().pending -= 1;
        cvar.notify_all();
    }

    /// Block until every queued delivery has finished or been dead-lettered.
    pub fn wait_idle(&self) {
        let (lock, cvar) = &*self.progress;
        let _idle = cvar.wait_while(lock.lock().unwrap(), |p| p.pending > 0).unwrap();
    }

    pub fn deliveries(&self) -> Vec<Delivery> {
        self.progress.0.lock().unwrap().deliveries.clone()
    }

    pub fn shutdown(&self) {
        self.tx.lock().unwrap().take();
        if let Some(worker) = self.worker.lock().unwrap().take() {
            let _ = worker.join();
        }
    }
}

impl Drop for Notifier {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn deliver_all(
    rx: Receiver<Job>,
    transport: Arc<dyn WebhookTransport>,
    policy: RetryPolicy,
    dead_letters: Option<PathBuf>,
    progress: Arc<(Mutex<Progress>, Condvar)>,
) {
    for job in rx {
        let body = serde_json::to_string(&job.notice).expect("notice serializes");
        let mut delivery = Delivery {
            ticket_id: job.notice.ticket_id,
            alert_id: job.notice.alert_id,
            attempts: 0,
            delivered: false,
            error: None,
        };
        let mut pause = policy.backoff;
        while delivery.attempts < policy.attempts.max(1) {
            delivery.attempts += 1;
            match transport.post(&job.url, &body) {
                Ok(()) => {
                    delivery.delivered = true;
                    delivery.error = None;
                    break;
                }
                Err(e) => {
                    log::warn!("webhook attempt {} for ticket {} failed: {e}", delivery.attempts, delivery.ticket_id);
                    delivery.error = Some(e);
                    if delivery.attempts < policy.attempts {
                        thread::sleep(pause);
                        pause *= 2;
                    }
                }
            }
        }
        if !delivery.delivered {
            if let Some(path) = &dead_letters {
                let entry = serde_json::json!({"url": job.url, "notice": job.notice, "error": delivery.error});
                let written = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .and_then(|mut f| writeln!(f, "{entry}"));
                if let Err(e) = written {
                    log::error!("cannot write dead letter: {e}");
                }
            }
        }
        let (lock, cvar) = &*progress;
        let mut p = lock.lock().unwrap();
        p.deliveries.push(delivery);
        p.pending -= 1;
        cvar.notify_all();
    }
}
