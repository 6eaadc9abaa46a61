//! Core library for the `qs` active-object runtime and its companion tools.
//!
//! The pieces fit together like this:
//!
//! * [`channels`] provides the two queue shapes everything else is built
//!   from: an unbounded MPSC queue (one per handler, holding private
//!   queues) and a bounded SPSC ring (one per client/handler pair).
//! * [`runtime`] is the handler runtime itself: spawn handlers, reserve
//!   them singly or in atomic groups, log asynchronous calls, and run
//!   queries on the client after a sync rendezvous, with dynamic sync
//!   coalescing and a lock-based baseline mode.
//! * [`semantics`] is an executable reference model of the same design:
//!   a small-step interpreter over parallel handler configurations with
//!   exhaustive schedule exploration, guarantee checking, and stuck-state
//!   detection. Programs for it are written in a small text DSL.
//! * [`syncopt`] is the static counterpart of dynamic sync coalescing: a
//!   forward must-analysis over a standalone textual IR that deletes
//!   provably redundant sync instructions.
//! * [`bench`] implements the benchmark suite over the runtime: the
//!   Cowichan kernels (randmat, thresh, winnow, outer, product, chain)
//!   plus five coordination benchmarks, each with an independent
//!   correctness check.
//! * [`suite`] bundles the acceptance checks run by `qs suite` and the
//!   `acceptance` integration test.

pub mod bench;
pub mod channels;
pub mod runtime;
pub mod semantics;
pub mod suite;
pub mod syncopt;

pub use runtime::{
    HandlerRef, Mode, PrivateQueue, Runtime, RuntimeConfig, RuntimeError, RuntimeStats,
};
