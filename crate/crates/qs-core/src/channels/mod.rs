//! The two specialized queue shapes the runtime is built from.
//!
//! * [`mpsc`]: an unbounded multiple-producer single-consumer queue. Each
//!   handler owns one; clients enqueue their private queues into it
//!   without ever blocking each other.
//! * [`spsc`]: a bounded single-producer single-consumer ring. Each
//!   private queue is one of these; the client enqueues call requests,
//!   the handler dequeues and executes them.
//!
//! Both queues share the same blocking contract: `recv` blocks until an
//! item is available or the channel is closed and drained, and only in
//! the latter case reports [`Closed`]. Items are owned values handed to
//! the consumer; nothing is shared after enqueue.

pub mod mpsc;
pub(crate) mod signal;
pub mod spsc;

/// The channel was closed and fully drained; no further items will arrive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Closed;

impl std::fmt::Display for Closed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "channel closed")
    }
}

impl std::error::Error for Closed {}

/// Enqueue was rejected because the channel is already closed.
///
/// Carries the item back so the caller keeps ownership.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelClosed<T>(pub T);

impl<T> std::fmt::Display for ChannelClosed<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "enqueue on closed channel")
    }
}

impl<T: std::fmt::Debug> std::error::Error for ChannelClosed<T> {}
