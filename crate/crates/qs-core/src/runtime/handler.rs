//! Handler-side machinery: the per-handler core and its run loop.

use std::any::Any;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};

use crate::channels::mpsc;
use crate::channels::signal::Signal;
use crate::channels::spsc::Ring;

use super::RuntimeInner;

pub(crate) type StateBox = Box<dyn Any + Send>;
pub(crate) type CallFn = Box<dyn FnOnce(&mut (dyn Any + Send)) + Send>;

/// One request logged on a private queue.
pub(crate) enum Request {
    /// Fire-and-forget call executed by the handler against its state.
    Call(CallFn),
    /// Rendezvous marker: the handler acknowledges that everything logged
    /// before it has been executed, then parks on this queue.
    Sync,
    /// Final request of a reservation session; the handler moves on to
    /// the next private queue.
    End,
}

/// State shared between one client's handle and the handler's view of the
/// same private queue. Reused across sessions when queue caching is on.
pub(crate) struct SessionShared {
    pub(crate) ring: Ring<Request>,
    /// Dynamic sync-coalescing flag: true means the handler is parked on
    /// this queue with nothing pending, so a query needs no roundtrip.
    pub(crate) synced: AtomicBool,
    /// True while a session on this queue is open (reserve .. end).
    pub(crate) open: AtomicBool,
    /// Rendezvous for the sync roundtrip.
    pub(crate) sync_done: AtomicBool,
    pub(crate) sync_signal: Signal,
    /// Set when the owning handler dies with a panic mid-session.
    pub(crate) poisoned: AtomicBool,
    pub(crate) stats: super::stats::QueueCounters,
}

impl SessionShared {
    pub(crate) fn new(capacity: usize) -> Self {
        SessionShared {
            ring: Ring::new(capacity),
            synced: AtomicBool::new(false),
            open: AtomicBool::new(false),
            sync_done: AtomicBool::new(false),
            sync_signal: Signal::new(),
            poisoned: AtomicBool::new(false),
            stats: Default::default(),
        }
    }
}

/// What travels through a handler's queue-of-queues: one reservation
/// session, i.e. the consumer view of a private queue.
pub(crate) struct IncomingSession {
    pub(crate) shared: Arc<SessionShared>,
}

/// Serializes clients in lock-baseline mode: `reserve` waits until no
/// other client holds the handler.
pub(crate) struct Gate {
    busy: Mutex<bool>,
    cv: Condvar,
}

impl Gate {
    fn new() -> Self {
        Gate {
            busy: Mutex::new(false),
            cv: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) {
        let mut busy = self.busy.lock().unwrap();
        while *busy {
            busy = self.cv.wait(busy).unwrap();
        }
        *busy = true;
    }

    pub(crate) fn release(&self) {
        let mut busy = self.busy.lock().unwrap();
        *busy = false;
        self.cv.notify_one();
    }
}

/// Everything a handler owns, shared behind an `Arc` by handler refs,
/// open sessions, and the runtime registry.
pub(crate) struct HandlerCore {
    pub(crate) id: u64,
    pub(crate) qoq: mpsc::Sender<IncomingSession>,
    /// Guarded object state; locked by the run loop for each call and by
    /// clients executing a query against a synced queue.
    pub(crate) state: Mutex<StateBox>,
    /// Serializes group reservations that include this handler.
    pub(crate) reservation_lock: Mutex<()>,
    /// Lock-baseline exclusivity gate.
    pub(crate) gate: Gate,
    pub(crate) poisoned: AtomicBool,
    pub(crate) panic_message: Mutex<Option<String>>,
    pub(crate) runtime: Weak<RuntimeInner>,
}

impl HandlerCore {
    pub(crate) fn new(
        id: u64,
        qoq: mpsc::Sender<IncomingSession>,
        state: StateBox,
        runtime: Weak<RuntimeInner>,
    ) -> Self {
        HandlerCore {
            id,
            qoq,
            state: Mutex::new(state),
            reservation_lock: Mutex::new(()),
            gate: Gate::new(),
            poisoned: AtomicBool::new(false),
            panic_message: Mutex::new(None),
            runtime,
        }
    }
}

fn panic_text(payload: &(dyn Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "opaque panic payload".to_string()
    }
}

/// The handler main loop: take one private queue at a time off the
/// queue-of-queues and drain it to its End marker, executing calls in
/// order and acknowledging sync requests. Exits when the queue-of-queues
/// is closed and drained. A panic inside a call poisons the handler:
/// remaining sessions are drained and woken so their clients fail fast.
pub(crate) fn run_loop(core: Arc<HandlerCore>, qoq_rx: mpsc::Receiver<IncomingSession>) {
    while let Ok(session) = qoq_rx.recv() {
        if !drain_session(&core, &session) {
            poison(&core, &qoq_rx, session);
            return;
        }
    }
}

/// Returns false if a call panicked.
fn drain_session(core: &HandlerCore, session: &IncomingSession) -> bool {
    let shared = &session.shared;
    loop {
        match shared.ring.recv() {
            Ok(Request::Call(f)) => {
                let mut state = core.state.lock().unwrap();
                let result = catch_unwind(AssertUnwindSafe(|| f(&mut **state)));
                drop(state);
                if let Err(payload) = result {
                    *core.panic_message.lock().unwrap() = Some(panic_text(payload.as_ref()));
                    return false;
                }
            }
            Ok(Request::Sync) => {
                // Mark synced before waking the client, so the client
                // observes the flag as soon as it resumes.
                shared.synced.store(true, Ordering::SeqCst);
                shared.sync_done.store(true, Ordering::SeqCst);
                shared.sync_signal.notify();
            }
            Ok(Request::End) | Err(_) => return true,
        }
    }
}

fn poison(core: &HandlerCore, qoq_rx: &mpsc::Receiver<IncomingSession>, current: IncomingSession) {
    core.poisoned.store(true, Ordering::SeqCst);
    core.qoq.close();
    let wake = |s: &IncomingSession| {
        s.shared.poisoned.store(true, Ordering::SeqCst);
        s.shared.sync_done.store(true, Ordering::SeqCst);
        s.shared.sync_signal.notify();
        s.shared.ring.close();
    };
    wake(&current);
    while let Ok(next) = qoq_rx.recv() {
        wake(&next);
    }
}
