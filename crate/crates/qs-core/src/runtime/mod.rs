//! The handler runtime.
//!
//! Every handler is an active object: it owns its state and a
//! queue-of-queues of incoming work. Clients never touch handler state
//! directly. Instead they *reserve* a handler, which enqueues a fresh
//! private queue on the handler's queue-of-queues, then log calls into
//! that private queue and finally end the block. The handler drains one
//! private queue at a time, so one client's requests are executed in
//! logging order with no interleaving from other clients.
//!
//! Queries (calls that return a value) synchronize: the client sends a
//! sync marker, waits until the handler has drained everything logged
//! before it, and then runs the query closure itself against the handler
//! state. While the queue stays synced, further queries skip the
//! roundtrip entirely; that is the dynamic sync-coalescing optimization,
//! controlled by [`RuntimeConfig::dynamic_coalescing`].
//!
//! [`Mode::Lock`] selects a baseline in which `reserve` blocks until the
//! handler is exclusively held, mimicking a classic one-queue-per-handler
//! lock design. The client API is identical in both modes.

mod handler;
mod stats;

use std::cell::RefCell;
use std::collections::HashMap;
use std::marker::PhantomData;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::mpsc;
use crate::channels::spsc::DEFAULT_CAPACITY;
use handler::{CallFn, HandlerCore, IncomingSession, Request, SessionShared};

pub use stats::{QueueStats, RuntimeStats};
pub(crate) use stats::Counters;

/// Which execution strategy the runtime uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Queue-of-queues: reservations are asynchronous enqueues.
    Qoq,
    /// Lock baseline: a reservation blocks until the handler is free.
    Lock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeConfig {
    pub mode: Mode,
    /// Elide sync roundtrips on already-synced queues.
    pub dynamic_coalescing: bool,
    /// Default worker-handler count for data-parallel work; also the
    /// value reported in benchmark output. Defaults to the CPU count.
    pub worker_threads: usize,
    /// Reuse a client's private queue across sessions to the same handler.
    pub queue_cache: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            mode: Mode::Qoq,
            dynamic_coalescing: true,
            worker_threads: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            queue_cache: true,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuntimeError {
    #[error("runtime is shut down")]
    Shutdown,
    #[error("session already ended")]
    SessionEnded,
    #[error("duplicate handler in reservation group")]
    DuplicateHandler,
    #[error("an open session to this handler already exists on this thread")]
    SessionOpen,
    #[error("handler poisoned by a panicking call: {0}")]
    Poisoned(String),
}

struct HandlerEntry {
    core: Arc<HandlerCore>,
    join: Option<JoinHandle<()>>,
}

pub(crate) struct RuntimeInner {
    id: u64,
    config: RuntimeConfig,
    counters: Counters,
    handlers: Mutex<Vec<HandlerEntry>>,
    next_handler: AtomicU64,
    closed: AtomicBool,
}

static NEXT_RUNTIME_ID: AtomicU64 = AtomicU64::new(1);

/// Owns the handlers spawned through it. Dropping the runtime performs a
/// best-effort shutdown; call [`Runtime::shutdown`] for the final stats.
pub struct Runtime {
    inner: Arc<RuntimeInner>,
}

impl Runtime {
    pub fn new(config: RuntimeConfig) -> Self {
        Runtime {
            inner: Arc::new(RuntimeInner {
                id: NEXT_RUNTIME_ID.fetch_add(1, Ordering::Relaxed),
                config,
                counters: Counters::default(),
                handlers: Mutex::new(Vec::new()),
                next_handler: AtomicU64::new(1),
                closed: AtomicBool::new(false),
            }),
        }
    }

    pub fn with_defaults() -> Self {
        Runtime::new(RuntimeConfig::default())
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.inner.config
    }

    /// Starts a handler owning `state` and returns a reference to it.
    ///
    /// The handler loop runs on its own thread: it repeatedly takes one
    /// private queue from its queue-of-queues and drains that queue's
    /// requests to the end marker, executing calls in order and
    /// acknowledging syncs.
    pub fn spawn<S: Send + 'static>(&self, state: S) -> Result<HandlerRef<S>, RuntimeError> {
        if self.inner.closed.load(Ordering::SeqCst) {
            return Err(RuntimeError::Shutdown);
        }
        let id = self.inner.next_handler.fetch_add(1, Ordering::Relaxed);
        let (qoq_tx, qoq_rx) = mpsc::channel();
        let core = Arc::new(HandlerCore::new(
            id,
            qoq_tx,
            Box::new(state),
            Arc::downgrade(&self.inner),
        ));
        let loop_core = Arc::clone(&core);
        let join = std::thread::Builder::new()
            .name(format!("qs-handler-{id}"))
            .stack_size(1 << 20)
            .spawn(move || handler::run_loop(loop_core, qoq_rx))
            .expect("failed to spawn handler thread");
        self.inner.handlers.lock().unwrap().push(HandlerEntry {
            core: Arc::clone(&core),
            join: Some(join),
        });
        Ok(HandlerRef {
            core,
            _state: PhantomData,
        })
    }

    /// Snapshot of the aggregated counters so far.
    pub fn stats(&self) -> RuntimeStats {
        self.inner.counters.snapshot()
    }

    /// Drains and joins all handlers, then returns the final counters.
    ///
    /// All sessions must have ended. Panics if any handler was poisoned
    /// by a panicking call.
    pub fn shutdown(mut self) -> RuntimeStats {
        self.shutdown_inner(true)
    }

    fn shutdown_inner(&mut self, panic_on_poison: bool) -> RuntimeStats {
        if !self.inner.closed.swap(true, Ordering::SeqCst) {
            let entries = std::mem::take(&mut *self.inner.handlers.lock().unwrap());
            for e in &entries {
                e.core.qoq.close();
            }
            let mut poisoned = Vec::new();
            for mut e in entries {
                if let Some(join) = e.join.take() {
                    join.join().expect("handler thread crashed");
                }
                if e.core.poisoned.load(Ordering::SeqCst) {
                    let msg = e
                        .core
                        .panic_message
                        .lock()
                        .unwrap()
                        .clone()
                        .unwrap_or_else(|| "unknown panic".into());
                    poisoned.push((e.core.id, msg));
                }
            }
            if panic_on_poison {
                if let Some((id, msg)) = poisoned.into_iter().next() {
                    panic!("handler {id} poisoned: {msg}");
                }
            }
        }
        self.inner.counters.snapshot()
    }
}

impl Drop for Runtime {
    fn drop(&mut self) {
        self.shutdown_inner(!std::thread::panicking());
    }
}

/// A reference to a spawned handler. Cloneable and sendable; reserving
/// through it opens a session (a private queue) for the calling thread.
pub struct HandlerRef<S> {
    core: Arc<HandlerCore>,
    _state: PhantomData<fn(&mut S)>,
}

impl<S> Clone for HandlerRef<S> {
    fn clone(&self) -> Self {
        HandlerRef {
            core: Arc::clone(&self.core),
            _state: PhantomData,
        }
    }
}

impl<S: Send + 'static> HandlerRef<S> {
    /// Opens a session: enqueues a private queue on this handler's
    /// queue-of-queues and returns the client handle for it.
    ///
    /// Asynchronous in [`Mode::Qoq`]. In [`Mode::Lock`] this blocks until
    /// the handler is exclusively held by the calling client.
    pub fn reserve(&self) -> Result<PrivateQueue<S>, RuntimeError> {
        let rt = self.runtime()?;
        let lock_mode = rt.config.mode == Mode::Lock;
        if lock_mode {
            self.core.gate.acquire();
        }
        match open_and_enqueue(&rt, &self.core) {
            Ok(shared) => Ok(PrivateQueue {
                shared,
                core: Arc::clone(&self.core),
                rt,
                gate_held: lock_mode,
                ended: false,
                _state: PhantomData,
            }),
            Err(e) => {
                if lock_mode {
                    self.core.gate.release();
                }
                Err(e)
            }
        }
    }

    fn runtime(&self) -> Result<Arc<RuntimeInner>, RuntimeError> {
        let rt = self.core.runtime.upgrade().ok_or(RuntimeError::Shutdown)?;
        if rt.closed.load(Ordering::SeqCst) {
            return Err(RuntimeError::Shutdown);
        }
        Ok(rt)
    }
}

/// Atomically reserves a group of handlers: the private queues land on
/// all target queue-of-queues without interleaving against any other
/// group reservation that shares a handler. Per-handler reservation locks
/// are taken in ascending handler-id order.
///
/// Returns the private queues in the same order as `handlers`.
pub fn reserve_group<S: Send + 'static>(
    handlers: &[&HandlerRef<S>],
) -> Result<Vec<PrivateQueue<S>>, RuntimeError> {
    if handlers.is_empty() {
        return Err(RuntimeError::DuplicateHandler);
    }
    let mut order: Vec<usize> = (0..handlers.len()).collect();
    order.sort_by_key(|&i| handlers[i].core.id);
    for pair in order.windows(2) {
        if handlers[pair[0]].core.id == handlers[pair[1]].core.id {
            return Err(RuntimeError::DuplicateHandler);
        }
    }
    let rt = handlers[0].runtime()?;
    for h in handlers {
        assert!(
            Arc::ptr_eq(&h.runtime()?, &rt),
            "group reservation across different runtimes"
        );
    }
    let lock_mode = rt.config.mode == Mode::Lock;
    let mut gates_held = 0usize;
    let result = (|| {
        if lock_mode {
            for &i in &order {
                handlers[i].core.gate.acquire();
                gates_held += 1;
            }
        }
        let mut sessions: Vec<(usize, Arc<SessionShared>)> = Vec::with_capacity(order.len());
        for &i in &order {
            match open_session(&rt, &handlers[i].core) {
                Ok(shared) => sessions.push((i, shared)),
                Err(e) => {
                    for (_, s) in &sessions {
                        s.open.store(false, Ordering::SeqCst);
                    }
                    return Err(e);
                }
            }
        }
        // Hold every reservation lock across all insertions so two
        // overlapping groups can never interleave their enqueues.
        let guards: Vec<_> = order
            .iter()
            .map(|&i| handlers[i].core.reservation_lock.lock().unwrap())
            .collect();
        let mut enqueue_err = None;
        for (i, shared) in &sessions {
            if enqueue_err.is_none() {
                if let Err(e) = enqueue_session(&handlers[*i].core, shared) {
                    enqueue_err = Some(e);
                }
            }
        }
        drop(guards);
        if let Some(e) = enqueue_err {
            // Close out whatever was enqueued so handlers move on.
            for (_, shared) in &sessions {
                let _ = shared.ring.send(Request::End);
                shared.open.store(false, Ordering::SeqCst);
            }
            return Err(e);
        }
        let mut by_index: Vec<Option<Arc<SessionShared>>> = vec![None; handlers.len()];
        for (i, shared) in sessions {
            by_index[i] = Some(shared);
        }
        Ok(by_index)
    })();
    match result {
        Ok(by_index) => Ok(by_index
            .into_iter()
            .enumerate()
            .map(|(i, shared)| PrivateQueue {
                shared: shared.expect("session missing"),
                core: Arc::clone(&handlers[i].core),
                rt: Arc::clone(&rt),
                gate_held: lock_mode,
                ended: false,
                _state: PhantomData,
            })
            .collect()),
        Err(e) => {
            if lock_mode {
                for &i in order.iter().take(gates_held) {
                    handlers[i].core.gate.release();
                }
            }
            Err(e)
        }
    }
}

thread_local! {
    /// Last session per (runtime, handler) opened from this thread. Used
    /// for the one-open-session rule and for queue reuse.
    static SESSIONS: RefCell<HashMap<(u64, u64), Arc<SessionShared>>> =
        RefCell::new(HashMap::new());
}

fn open_session(
    rt: &Arc<RuntimeInner>,
    core: &Arc<HandlerCore>,
) -> Result<Arc<SessionShared>, RuntimeError> {
    SESSIONS.with(|cell| {
        let mut map = cell.borrow_mut();
        let key = (rt.id, core.id);
        if let Some(existing) = map.get(&key) {
            if existing.open.load(Ordering::SeqCst) {
                return Err(RuntimeError::SessionOpen);
            }
            if rt.config.queue_cache && !existing.poisoned.load(Ordering::SeqCst) {
                let shared = Arc::clone(existing);
                shared.open.store(true, Ordering::SeqCst);
                shared.synced.store(false, Ordering::SeqCst);
                rt.counters.queues_reused.fetch_add(1, Ordering::Relaxed);
                return Ok(shared);
            }
        }
        let shared = Arc::new(SessionShared::new(DEFAULT_CAPACITY));
        shared.open.store(true, Ordering::SeqCst);
        rt.counters.queues_created.fetch_add(1, Ordering::Relaxed);
        map.insert(key, Arc::clone(&shared));
        Ok(shared)
    })
}

fn enqueue_session(
    core: &Arc<HandlerCore>,
    shared: &Arc<SessionShared>,
) -> Result<(), RuntimeError> {
    let session = IncomingSession {
        shared: Arc::clone(shared),
    };
    if core.qoq.send(session).is_err() {
        shared.open.store(false, Ordering::SeqCst);
        return Err(poison_or_shutdown(core));
    }
    // The enqueue may have raced handler poisoning; re-check so no session
    // is ever silently parked on a dead handler.
    if core.poisoned.load(Ordering::SeqCst) {
        shared.open.store(false, Ordering::SeqCst);
        return Err(poison_or_shutdown(core));
    }
    Ok(())
}

fn open_and_enqueue(
    rt: &Arc<RuntimeInner>,
    core: &Arc<HandlerCore>,
) -> Result<Arc<SessionShared>, RuntimeError> {
    let shared = open_session(rt, core)?;
    enqueue_session(core, &shared)?;
    Ok(shared)
}

fn poison_or_shutdown(core: &HandlerCore) -> RuntimeError {
    if core.poisoned.load(Ordering::SeqCst) {
        let msg = core
            .panic_message
            .lock()
            .unwrap()
            .clone()
            .unwrap_or_else(|| "unknown panic".into());
        RuntimeError::Poisoned(msg)
    } else {
        RuntimeError::Shutdown
    }
}

/// A client's open session to one handler.
///
/// Used by one thread at a time; may be sent between threads. Dropping
/// an open session ends it.
pub struct PrivateQueue<S> {
    shared: Arc<SessionShared>,
    core: Arc<HandlerCore>,
    rt: Arc<RuntimeInner>,
    gate_held: bool,
    ended: bool,
    _state: PhantomData<fn(&mut S)>,
}

impl<S: Send + 'static> PrivateQueue<S> {
    /// Logs an asynchronous call. Returns as soon as the request is
    /// enqueued; `f` runs later on the handler, after everything logged
    /// before it in this session.
    pub fn call(&mut self, f: impl FnOnce(&mut S) + Send + 'static) -> Result<(), RuntimeError> {
        self.check_live()?;
        self.shared.synced.store(false, Ordering::SeqCst);
        let erased: CallFn = Box::new(move |any| {
            let state = any.downcast_mut::<S>().expect("handler state type mismatch");
            f(state);
        });
        if self.shared.ring.send(Request::Call(erased)).is_err() {
            return Err(poison_or_shutdown(&self.core));
        }
        self.shared
            .stats
            .calls_enqueued
            .fetch_add(1, Ordering::Relaxed);
        self.rt
            .counters
            .calls_enqueued
            .fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Runs a query against the handler state and returns its value.
    ///
    /// If the queue is not synced (or coalescing is off) this first does
    /// a sync roundtrip, which guarantees every earlier call of this
    /// session has completed. The closure itself always executes on the
    /// calling thread. Panics inside `f` propagate to the caller.
    pub fn query<R>(&mut self, f: impl FnOnce(&mut S) -> R) -> Result<R, RuntimeError> {
        self.check_live()?;
        let elide =
            self.rt.config.dynamic_coalescing && self.shared.synced.load(Ordering::SeqCst);
        if elide {
            self.shared
                .stats
                .syncs_elided
                .fetch_add(1, Ordering::Relaxed);
            self.rt.counters.syncs_elided.fetch_add(1, Ordering::Relaxed);
        } else {
            self.shared.sync_done.store(false, Ordering::SeqCst);
            if self.shared.ring.send(Request::Sync).is_err() {
                return Err(poison_or_shutdown(&self.core));
            }
            let shared = &self.shared;
            shared
                .sync_signal
                .park_until(|| shared.sync_done.load(Ordering::SeqCst));
            if shared.poisoned.load(Ordering::SeqCst) {
                return Err(poison_or_shutdown(&self.core));
            }
            self.shared
                .stats
                .syncs_sent
                .fetch_add(1, Ordering::Relaxed);
            self.rt
                .counters
                .sync_roundtrips
                .fetch_add(1, Ordering::Relaxed);
        }
        // The handler is parked on this queue, so the client may access
        // the state directly. The mutex is uncontended by construction.
        let mut guard = self.core.state.lock().unwrap();
        let state = guard
            .downcast_mut::<S>()
            .expect("handler state type mismatch");
        let result = catch_unwind(AssertUnwindSafe(|| f(state)));
        drop(guard);
        match result {
            Ok(v) => Ok(v),
            Err(payload) => resume_unwind(payload),
        }
    }

    /// Ends the session. The handler finishes this private queue and
    /// moves on to the next client. Errors with `SessionEnded` if called
    /// twice.
    pub fn end(&mut self) -> Result<(), RuntimeError> {
        if self.ended {
            return Err(RuntimeError::SessionEnded);
        }
        self.ended = true;
        self.shared.synced.store(false, Ordering::SeqCst);
        let send_result = self.shared.ring.send(Request::End);
        self.shared.open.store(false, Ordering::SeqCst);
        if self.gate_held {
            self.gate_held = false;
            self.core.gate.release();
        }
        if send_result.is_err() {
            return Err(poison_or_shutdown(&self.core));
        }
        Ok(())
    }

    /// Counters for this private queue (across cached sessions).
    pub fn stats(&self) -> QueueStats {
        self.shared.stats.snapshot()
    }

    fn check_live(&self) -> Result<(), RuntimeError> {
        if self.ended {
            return Err(RuntimeError::SessionEnded);
        }
        if self.shared.poisoned.load(Ordering::SeqCst) {
            return Err(poison_or_shutdown(&self.core));
        }
        Ok(())
    }
}

impl<S> Drop for PrivateQueue<S> {
    fn drop(&mut self) {
        if !self.ended {
            self.ended = true;
            self.shared.synced.store(false, Ordering::SeqCst);
            let _ = self.shared.ring.send(Request::End);
            self.shared.open.store(false, Ordering::SeqCst);
            if self.gate_held {
                self.core.gate.release();
            }
        }
    }
}
