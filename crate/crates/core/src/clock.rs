//! Injectable simulated clock shared by the orchestrator, ledger and monitor.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Simulated seconds since an arbitrary epoch. Clones share the same time.
#[derive(Debug, Clone, Default)]
pub struct SimClock {
    bits: Arc<AtomicU64>,
}

impl SimClock {
    pub fn new() -> Self {
        Self::starting_at(0.0)
    }

    pub fn starting_at(t: f64) -> Self {
        Self {
            bits: Arc::new(AtomicU64::new(t.to_bits())),
        }
    }

    pub fn now(&self) -> f64 {
        f64::from_bits(self.bits.load(Ordering::SeqCst))
    }

    /// Whole seconds, as stamped on ledger entries.
    pub fn now_secs(&self) -> u64 {
        self.now().max(0.0).floor() as u64
    }

    pub fn set(&self, t: f64) {
        self.bits.store(t.to_bits(), Ordering::SeqCst);
    }

    /// Moves time forward by `dt` (negative values are ignored) and returns the new time.
    pub fn advance(&self, dt: f64) -> f64 {
        let dt = if dt.is_finite() { dt.max(0.0) } else { 0.0 };
        let mut cur = self.bits.load(Ordering::SeqCst);
        loop {
            let next = (f64::from_bits(cur) + dt).to_bits();
            match self
                .bits
                .compare_exchange(cur, next, Ordering::SeqCst, Ordering::SeqCst)
            {
                Ok(_) => return f64::from_bits(next),
                Err(actual) => cur = actual,
            }
        }
    }
}
