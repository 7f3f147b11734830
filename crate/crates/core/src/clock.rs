//! Event timestamps.
//!
//! Trajectories must replay byte-identically under scripted backends, so the
//! default clock is logical: a fixed epoch advanced by a fixed step per
//! event. Live HTTP runs can opt into the system clock; real wall-clock data
//! belongs in run manifests, not trajectories.

use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// 2025-01-01T00:00:00Z, the logical-clock epoch.
const LOGICAL_EPOCH_UNIX: i64 = 1_735_689_600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    #[default]
    Logical,
    System,
}

#[derive(Debug)]
pub enum Clock {
    Logical { epoch_unix: i64, step_secs: i64, ticks: AtomicI64 },
    System,
}

impl Clock {
    pub fn new(kind: ClockKind) -> Self {
        match kind {
            ClockKind::Logical => Clock::Logical {
                epoch_unix: LOGICAL_EPOCH_UNIX,
                step_secs: 1,
                ticks: AtomicI64::new(0),
            },
            ClockKind::System => Clock::System,
        }
    }

    pub fn logical() -> Self {
        Clock::new(ClockKind::Logical)
    }

    /// Next ISO-8601 UTC timestamp; logical clocks advance one step per call.
    pub fn next_timestamp(&self) -> String {
        let instant: DateTime<Utc> = match self {
            Clock::Logical { epoch_unix, step_secs, ticks } => {
                let tick = ticks.fetch_add(1, Ordering::SeqCst);
                DateTime::from_timestamp(epoch_unix + tick * step_secs, 0)
                    .expect("logical timestamp in range")
            }
            Clock::System => Utc::now(),
        };
        instant.format("%Y-%m-%dT%H:%M:%SZ").to_string()
    }

    /// Deterministic elapsed time for logical clocks; `None` for the system
    /// clock (callers measure real elapsed time themselves).
    pub fn logical_elapsed_ms(&self) -> Option<u64> {
        match self {
            Clock::Logical { step_secs, ticks, .. } => {
                Some((ticks.load(Ordering::SeqCst) * step_secs * 1000).max(0) as u64)
            }
            Clock::System => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logical_clock_is_deterministic() {
        let a = Clock::logical();
        let b = Clock::logical();
        for _ in 0..5 {
            assert_eq!(a.next_timestamp(), b.next_timestamp());
        }
        assert_eq!(a.logical_elapsed_ms(), Some(5000));
    }

    #[test]
    fn logical_timestamps_are_iso8601() {
        let clock = Clock::logical();
        assert_eq!(clock.next_timestamp(), "2025-01-01T00:00:00Z");
        assert_eq!(clock.next_timestamp(), "2025-01-01T00:00:01Z");
    }
}
