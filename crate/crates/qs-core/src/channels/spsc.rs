//! Bounded single-producer single-consumer ring channel.
//!
//! One thread enqueues, one thread dequeues. `send` blocks while the ring
//! is full, `recv` blocks while it is empty; both return early once the
//! channel is closed. Closing is idempotent, wakes any blocked side, and
//! lets the consumer drain whatever is still buffered.

use std::cell::UnsafeCell;
use std::mem::MaybeUninit;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use super::signal::Signal;
use super::{ChannelClosed, Closed};

pub const DEFAULT_CAPACITY: usize = 1024;

/// Shared ring state. Indices grow monotonically and wrap modulo the
/// capacity on slot access; `tail - head` is the number of buffered items.
pub(crate) struct Ring<T> {
    buf: Box<[UnsafeCell<MaybeUninit<T>>]>,
    cap: usize,
    /// Next slot the producer writes. Written only by the producer.
    tail: AtomicUsize,
    /// Next slot the consumer reads. Written only by the consumer.
    head: AtomicUsize,
    closed: AtomicBool,
    /// Parks the producer while the ring is full.
    producer: Signal,
    /// Parks the consumer while the ring is empty.
    consumer: Signal,
}

// The UnsafeCell slots are only touched according to the index protocol:
// the producer writes slot `tail` before publishing `tail + 1`, the
// consumer reads slot `head` before publishing `head + 1`, and the two
// never hold the same index while both endpoints follow the one-thread-
// per-role rule.
unsafe impl<T: Send> Sync for Ring<T> {}
unsafe impl<T: Send> Send for Ring<T> {}

impl<T> Ring<T> {
    pub(crate) fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "spsc capacity must be positive");
        let buf = (0..capacity)
            .map(|_| UnsafeCell::new(MaybeUninit::uninit()))
            .collect::<Vec<_>>()
            .into_boxed_slice();
        Ring {
            buf,
            cap: capacity,
            tail: AtomicUsize::new(0),
            head: AtomicUsize::new(0),
            closed: AtomicBool::new(false),
            producer: Signal::new(),
            consumer: Signal::new(),
        }
    }

    pub(crate) fn capacity(&self) -> usize {
        self.cap
    }

    pub(crate) fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    /// Producer-role enqueue. Blocks while the ring is full.
    ///
    /// Caller contract: at most one thread acts as producer at a time.
    pub(crate) fn send(&self, item: T) -> Result<(), ChannelClosed<T>> {
        if self.is_closed() {
            return Err(ChannelClosed(item));
        }
        loop {
            let tail = self.tail.load(Ordering::Relaxed);
            let head = self.head.load(Ordering::Acquire);
            if tail.wrapping_sub(head) < self.cap {
                unsafe {
                    (*self.buf[tail % self.cap].get()).write(item);
                }
                self.tail.store(tail.wrapping_add(1), Ordering::Release);
                self.consumer.notify();
                return Ok(());
            }
            if self.is_closed() {
                return Err(ChannelClosed(item));
            }
            self.producer.park_until(|| {
                self.head.load(Ordering::Acquire) != head || self.is_closed()
            });
        }
    }

    /// Consumer-role dequeue. Blocks until an item arrives or the channel
    /// is closed and drained.
    ///
    /// Caller contract: at most one thread acts as consumer at a time.
    pub(crate) fn recv(&self) -> Result<T, Closed> {
        loop {
            match self.try_recv() {
                Some(item) => return Ok(item),
                None => {
                    if self.is_closed() {
                        // Re-check emptiness after observing closed so a
                        // send that finished just before close is drained.
                        if let Some(item) = self.try_recv() {
                            return Ok(item);
                        }
                        return Err(Closed);
                    }
                    let tail = self.tail.load(Ordering::Acquire);
                    self.consumer.park_until(|| {
                        self.tail.load(Ordering::Acquire) != tail || self.is_closed()
                    });
                }
            }
        }
    }

    pub(crate) fn try_recv(&self) -> Option<T> {
        let head = self.head.load(Ordering::Relaxed);
        let tail = self.tail.load(Ordering::Acquire);
        if head == tail {
            return None;
        }
        let item = unsafe { (*self.buf[head % self.cap].get()).assume_init_read() };
        self.head.store(head.wrapping_add(1), Ordering::Release);
        self.producer.notify();
        Some(item)
    }

    /// Idempotent close. Wakes both sides; buffered items stay readable.
    pub(crate) fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.producer.notify();
        self.consumer.notify();
    }
}

impl<T> Drop for Ring<T> {
    fn drop(&mut self) {
        let head = *self.head.get_mut();
        let tail = *self.tail.get_mut();
        let mut i = head;
        while i != tail {
            unsafe {
                (*self.buf[i % self.cap].get()).assume_init_drop();
            }
            i = i.wrapping_add(1);
        }
    }
}

/// Creates a bounded channel with the given capacity.
///
/// Panics if `capacity` is zero.
pub fn channel<T>(capacity: usize) -> (Sender<T>, Receiver<T>) {
    let ring = Arc::new(Ring::new(capacity));
    (
        Sender {
            ring: Arc::clone(&ring),
        },
        Receiver { ring },
    )
}

/// The producing endpoint. Exactly one exists per channel.
pub struct Sender<T> {
    ring: Arc<Ring<T>>,
}

impl<T> Sender<T> {
    /// Appends an item, blocking while the ring is full.
    pub fn send(&self, item: T) -> Result<(), ChannelClosed<T>> {
        self.ring.send(item)
    }

    pub fn close(&self) {
        self.ring.close();
    }

    pub fn capacity(&self) -> usize {
        self.ring.capacity()
    }
}

impl<T> Drop for Sender<T> {
    fn drop(&mut self) {
        self.ring.close();
    }
}

/// The consuming endpoint. Exactly one exists per channel.
pub struct Receiver<T> {
    ring: Arc<Ring<T>>,
}

impl<T> Receiver<T> {
    /// Removes the oldest item, blocking until one is available. Returns
    /// `Err(Closed)` only once the channel is closed and drained.
    pub fn recv(&self) -> Result<T, Closed> {
        self.ring.recv()
    }

    /// Non-blocking variant; `None` means currently empty.
    pub fn try_recv(&self) -> Option<T> {
        self.ring.try_recv()
    }

    pub fn close(&self) {
        self.ring.close();
    }
}

impl<T> Drop for Receiver<T> {
    fn drop(&mut self) {
        self.ring.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn fifo_order() {
        let (tx, rx) = channel(8);
        tx.send(1).unwrap();
        tx.send(2).unwrap();
        tx.send(3).unwrap();
        assert_eq!(rx.recv(), Ok(1));
        assert_eq!(rx.recv(), Ok(2));
        assert_eq!(rx.recv(), Ok(3));
    }

    #[test]
    fn send_after_close_rejected() {
        let (tx, rx) = channel(4);
        rx.close();
        assert_eq!(tx.send(7), Err(ChannelClosed(7)));
    }

    #[test]
    fn close_then_recv_reports_closed() {
        let (tx, rx) = channel::<u32>(4);
        tx.close();
        assert_eq!(rx.recv(), Err(Closed));
    }

    #[test]
    fn drains_before_reporting_closed() {
        let (tx, rx) = channel(4);
        tx.send(10).unwrap();
        tx.close();
        assert_eq!(rx.recv(), Ok(10));
        assert_eq!(rx.recv(), Err(Closed));
    }

    #[test]
    fn close_is_idempotent() {
        let (tx, rx) = channel::<u32>(4);
        tx.close();
        tx.close();
        rx.close();
        assert_eq!(rx.recv(), Err(Closed));
    }

    #[test]
    fn recv_blocks_until_send() {
        let (tx, rx) = channel(4);
        let t = std::thread::spawn(move || rx.recv());
        std::thread::sleep(Duration::from_millis(30));
        tx.send(42u32).unwrap();
        assert_eq!(t.join().unwrap(), Ok(42));
    }

    #[test]
    fn close_wakes_blocked_consumer() {
        let (tx, rx) = channel::<u32>(4);
        let t = std::thread::spawn(move || rx.recv());
        std::thread::sleep(Duration::from_millis(30));
        tx.close();
        assert_eq!(t.join().unwrap(), Err(Closed));
    }

    #[test]
    fn buffered_items_survive_close() {
        let (tx, rx) = channel(8);
        tx.send(1).unwrap();
        tx.send(2).unwrap();
        tx.send(3).unwrap();
        tx.close();
        assert_eq!(rx.recv(), Ok(1));
        assert_eq!(rx.recv(), Ok(2));
        assert_eq!(rx.recv(), Ok(3));
        assert_eq!(rx.recv(), Err(Closed));
    }

    #[test]
    fn send_blocks_when_full_until_consumer_drains() {
        let (tx, rx) = channel(2);
        tx.send(0).unwrap();
        tx.send(1).unwrap();
        let t = std::thread::spawn(move || {
            tx.send(2).unwrap();
            tx
        });
        std::thread::sleep(Duration::from_millis(30));
        assert_eq!(rx.recv(), Ok(0));
        let tx = t.join().unwrap();
        assert_eq!(rx.recv(), Ok(1));
        assert_eq!(rx.recv(), Ok(2));
        drop(tx);
    }

    #[test]
    fn ordering_stress_one_million_items() {
        let (tx, rx) = channel(DEFAULT_CAPACITY);
        const N: u64 = 1_000_000;
        let producer = std::thread::spawn(move || {
            for i in 0..N {
                tx.send(i).unwrap();
            }
        });
        for i in 0..N {
            assert_eq!(rx.recv(), Ok(i));
        }
        producer.join().unwrap();
        assert_eq!(rx.recv(), Err(Closed));
    }

    #[test]
    fn drop_releases_unread_items() {
        let counter = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
        #[derive(Debug)]
        struct Tracked(std::sync::Arc<std::sync::atomic::AtomicUsize>);
        impl Drop for Tracked {
            fn drop(&mut self) {
                self.0.fetch_add(1, Ordering::SeqCst);
            }
        }
        let (tx, rx) = channel(8);
        for _ in 0..5 {
            tx.send(Tracked(counter.clone())).unwrap();
        }
        drop(rx.recv());
        drop(tx);
        drop(rx);
        assert_eq!(counter.load(Ordering::SeqCst), 5);
    }
}
