//! One-waiter park/notify primitive shared by the queue implementations.

use std::sync::atomic::{fence, AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};

/// How many busy-wait iterations to burn before yielding, and how many
/// yields before parking for real. Small on purpose: the workloads this
/// runtime targets oversubscribe cores, so long spins only steal cycles
/// from the thread we are waiting on.
const SPIN_LIMIT: u32 = 64;
const YIELD_LIMIT: u32 = 4;

/// A parking slot for exactly one waiting thread.
///
/// The waiter publishes `parked` before re-checking its wakeup condition;
/// the notifier makes its state change visible before loading `parked`.
/// Both sides separate the two accesses with a SeqCst fence, so either
/// the waiter sees the state change during its re-check or the notifier
/// sees `parked == true` and takes the lock to signal. The condvar wait
/// happens while holding the same lock the notifier signals under, which
/// closes the remaining window.
pub(crate) struct Signal {
    parked: AtomicBool,
    lock: Mutex<()>,
    cv: Condvar,
}

impl Signal {
    pub(crate) fn new() -> Self {
        Signal {
            parked: AtomicBool::new(false),
            lock: Mutex::new(()),
            cv: Condvar::new(),
        }
    }

    /// Wake the waiter if it is parked (or about to park).
    ///
    /// The caller must have already published the state change that
    /// `park_until`'s predicate observes.
    pub(crate) fn notify(&self) {
        fence(Ordering::SeqCst);
        if self.parked.load(Ordering::Relaxed) {
            let _guard = self.lock.lock().unwrap();
            self.cv.notify_all();
        }
    }

    /// Block the calling thread until `ready()` returns true.
    ///
    /// Spins briefly, then parks. The predicate must only read state that
    /// notifiers publish before calling [`Signal::notify`].
    pub(crate) fn park_until(&self, ready: impl Fn() -> bool) {
        for _ in 0..SPIN_LIMIT {
            if ready() {
                return;
            }
            std::hint::spin_loop();
        }
        for _ in 0..YIELD_LIMIT {
            if ready() {
                return;
            }
            std::thread::yield_now();
        }
        let mut guard = self.lock.lock().unwrap();
        loop {
            self.parked.store(true, Ordering::Relaxed);
            fence(Ordering::SeqCst);
            if ready() {
                break;
            }
            guard = self.cv.wait(guard).unwrap();
        }
        self.parked.store(false, Ordering::Relaxed);
    }
}
