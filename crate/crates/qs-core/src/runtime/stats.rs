//! Instrumentation counters for the runtime.

use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

/// Aggregated counters, snapshotted at shutdown or on demand.
///
/// Every query bumps exactly one of `sync_roundtrips` or `syncs_elided`,
/// so their sum equals the number of query/sync operations issued.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub sync_roundtrips: u64,
    pub syncs_elided: u64,
    pub calls_enqueued: u64,
    pub queues_created: u64,
    pub queues_reused: u64,
}

#[derive(Default)]
pub(crate) struct Counters {
    pub(crate) sync_roundtrips: AtomicU64,
    pub(crate) syncs_elided: AtomicU64,
    pub(crate) calls_enqueued: AtomicU64,
    pub(crate) queues_created: AtomicU64,
    pub(crate) queues_reused: AtomicU64,
}

impl Counters {
    pub(crate) fn snapshot(&self) -> RuntimeStats {
        RuntimeStats {
            sync_roundtrips: self.sync_roundtrips.load(Ordering::Relaxed),
            syncs_elided: self.syncs_elided.load(Ordering::Relaxed),
            calls_enqueued: self.calls_enqueued.load(Ordering::Relaxed),
            queues_created: self.queues_created.load(Ordering::Relaxed),
            queues_reused: self.queues_reused.load(Ordering::Relaxed),
        }
    }
}

/// Per-private-queue counters, readable through the client handle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub syncs_sent: u64,
    pub syncs_elided: u64,
    pub calls_enqueued: u64,
}

#[derive(Default)]
pub(crate) struct QueueCounters {
    pub(crate) syncs_sent: AtomicU64,
    pub(crate) syncs_elided: AtomicU64,
    pub(crate) calls_enqueued: AtomicU64,
}

impl QueueCounters {
    pub(crate) fn snapshot(&self) -> QueueStats {
        QueueStats {
            syncs_sent: self.syncs_sent.load(Ordering::Relaxed),
            syncs_elided: self.syncs_elided.load(Ordering::Relaxed),
            calls_enqueued: self.calls_enqueued.load(Ordering::Relaxed),
        }
    }
}
