//! Child processes with captured output, timeouts and forced termination.
//!
//! Each child is started in its own process group so termination also
//! reaches anything it spawned; otherwise a grandchild holding the output
//! pipes open would keep the readers alive.

use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finished {
    /// Exit code, `None` when killed by a signal.
    pub code: Option<i32>,
    pub signal: Option<i32>,
    pub stdout: String,
    pub stderr: String,
}

impl Finished {
    pub fn success(&self) -> bool {
        self.code == Some(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Exited(Finished),
    TimedOut(Finished),
}

fn reader(mut pipe: impl Read + Send + 'static) -> JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = pipe.read_to_end(&mut buf);
        buf
    })
}

/// A running child whose stdout and stderr are collected in the background.
#[derive(Debug)]
pub struct Supervised {
    child: Child,
    stdout: Option<JoinHandle<Vec<u8>>>,
    stderr: Option<JoinHandle<Vec<u8>>>,
    started: Instant,
}

impl Supervised {
    pub fn spawn(mut command: Command) -> io::Result<Self> {
        command.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped()).process_group(0);
        let mut child = command.spawn()?;
        let stdout = child.stdout.take().map(reader);
        let stderr = child.stderr.take().map(reader);
        Ok(Self { child, stdout, stderr, started: Instant::now() })
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    fn collect(&mut self, status: ExitStatus) -> Finished {
        let text = |h: Option<JoinHandle<Vec<u8>>>| {
            h.and_then(|h| h.join().ok()).map(|b| String::from_utf8_lossy(&b).into_owned()).unwrap_or_default()
        };
        Finished {
            code: status.code(),
            signal: status.signal(),
            stdout: text(self.stdout.take()),
            stderr: text(self.stderr.take()),
        }
    }

    /// The result if the child has exited, without blocking.
    pub fn try_finish(&mut self) -> io::Result<Option<Finished>> {
        Ok(self.child.try_wait()?.map(|status| self.collect(status)))
    }

    /// Kill the whole process group and reap the child.
    pub fn terminate(&mut self) -> io::Result<Finished> {
        if let Some(status) = self.child.try_wait()? {
            return Ok(self.collect(status));
        }
        let pgid = self.child.id() as libc::pid_t;
        // SAFETY: signalling a process group we created; no memory is touched.
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
        let status = self.child.wait()?;
        Ok(self.collect(status))
    }

    pub fn wait_timeout(mut self, timeout: Duration) -> io::Result<RunOutcome> {
        let deadline = self.started + timeout;
        let mut pause = Duration::from_millis(1);
        loop {
            if let Some(done) = self.try_finish()? {
                return Ok(RunOutcome::Exited(done));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(RunOutcome::TimedOut(self.terminate()?));
            }
            thread::sleep(pause.min(deadline - now));
            pause = (pause * 2).min(Duration::from_millis(20));
        }
    }
}

impl Drop for Supervised {
    fn drop(&mut self) {
        if matches!(self.child.try_wait(), Ok(None)) {
            let _ = self.terminate();
        }
    }
}

/// Run `command` to completion or until `timeout` passes.
pub fn run_with_timeout(command: Command, timeout: Duration) -> io::Result<RunOutcome> {
    Supervised::spawn(command)?.wait_timeout(timeout)
}
