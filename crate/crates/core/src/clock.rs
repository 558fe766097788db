//! Wall-clock and harness-driven clocks.

use std::sync::{Arc, Mutex};

use chrono::{Duration, NaiveDateTime, Utc};

pub trait Clock: Send + Sync {
    fn now(&self) -> NaiveDateTime;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> NaiveDateTime {
        Utc::now().naive_utc()
    }
}

/// A clock that only moves when told to. Clones share the same time.
#[derive(Debug, Clone)]
pub struct VirtualClock(Arc<Mutex<NaiveDateTime>>);

impl VirtualClock {
    pub fn starting_at(start: NaiveDateTime) -> Self {
        Self(Arc::new(Mutex::new(start)))
    }

    pub fn advance(&self, by: Duration) -> NaiveDateTime {
        let mut now = self.0.lock().unwrap();
        *now += by;
        *now
    }

    pub fn set(&self, to: NaiveDateTime) {
        *self.0.lock().unwrap() = to;
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> NaiveDateTime {
        *self.0.lock().unwrap()
    }
}
