//! Unbounded multiple-producer single-consumer queue.
//!
//! Producers enqueue with a single atomic swap and never block or wait on
//! one another, which is the property the handler request queue depends
//! on. The consumer dequeues in FIFO order per producer; the merge order
//! across producers is whatever order the swaps land in. After `close`,
//! enqueues are rejected and the consumer drains what is left before
//! seeing [`Closed`].

use std::cell::UnsafeCell;
use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicPtr, Ordering};
use std::sync::Arc;

use super::signal::Signal;
use super::{ChannelClosed, Closed};

struct Node<T> {
    next: AtomicPtr<Node<T>>,
    value: Option<T>,
}

/// Intrusive list: producers swap themselves onto `tail` and then link
/// the previous node forward; the consumer chases `next` pointers from a
/// stub node at `head`. Between the swap and the link a node is briefly
/// unreachable from `head`; `try_recv` reports that window as [`Busy`]
/// and the consumer retries instead of parking.
pub(crate) struct Queue<T> {
    tail: AtomicPtr<Node<T>>,
    head: UnsafeCell<*mut Node<T>>,
    closed: AtomicBool,
    consumer: Signal,
}

unsafe impl<T: Send> Sync for Queue<T> {}
unsafe impl<T: Send> Send for Queue<T> {}

pub(crate) enum TryRecv<T> {
    Item(T),
    Empty,
    /// A producer is mid-enqueue; the queue is non-empty but the new node
    /// is not linked yet.
    Busy,
}

impl<T> Queue<T> {
    pub(crate) fn new() -> Self {
        let stub = Box::into_raw(Box::new(Node {
            next: AtomicPtr::new(ptr::null_mut()),
            value: None,
        }));
        Queue {
            tail: AtomicPtr::new(stub),
            head: UnsafeCell::new(stub),
            closed: AtomicBool::new(false),
            consumer: Signal::new(),
        }
    }

    pub(crate) fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    /// Lock-free enqueue, callable from any number of threads.
    pub(crate) fn send(&self, value: T) -> Result<(), ChannelClosed<T>> {
        if self.is_closed() {
            return Err(ChannelClosed(value));
        }
        let node = Box::into_raw(Box::new(Node {
            next: AtomicPtr::new(ptr::null_mut()),
            value: Some(value),
        }));
        let prev = self.tail.swap(node, Ordering::AcqRel);
        unsafe {
            (*prev).next.store(node, Ordering::Release);
        }
        self.consumer.notify();
        Ok(())
    }

    /// Consumer-role dequeue attempt.
    ///
    /// Caller contract: only the single consumer thread calls this.
    pub(crate) fn try_recv(&self) -> TryRecv<T> {
        unsafe {
            let head = *self.head.get();
            let next = (*head).next.load(Ordering::Acquire);
            if !next.is_null() {
                *self.head.get() = next;
                let value = (*next).value.take().expect("mpsc node consumed twice");
                drop(Box::from_raw(head));
                return TryRecv::Item(value);
            }
            if self.tail.load(Ordering::Acquire) == head {
                TryRecv::Empty
            } else {
                TryRecv::Busy
            }
        }
    }

    /// Blocking dequeue; `Err(Closed)` only after close and full drain.
    pub(crate) fn recv(&self) -> Result<T, Closed> {
        loop {
            match self.try_recv() {
                TryRecv::Item(v) => return Ok(v),
                TryRecv::Busy => std::hint::spin_loop(),
                TryRecv::Empty => {
                    if self.is_closed() {
                        // Emptiness was observed after closed, and Empty
                        // implies no half-linked node, so this is final.
                        return Err(Closed);
                    }
                    self.consumer
                        .park_until(|| self.has_visible_work() || self.is_closed());
                }
            }
        }
    }

    fn has_visible_work(&self) -> bool {
        unsafe {
            let head = *self.head.get();
            !(*head).next.load(Ordering::Acquire).is_null()
                || self.tail.load(Ordering::Acquire) != head
        }
    }

    pub(crate) fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.consumer.notify();
    }
}

impl<T> Drop for Queue<T> {
    fn drop(&mut self) {
        loop {
            match self.try_recv() {
                TryRecv::Item(v) => drop(v),
                TryRecv::Busy => std::hint::spin_loop(),
                TryRecv::Empty => break,
            }
        }
        unsafe {
            drop(Box::from_raw(*self.head.get()));
        }
    }
}

/// Creates an unbounded MPSC channel.
pub fn channel<T>() -> (Sender<T>, Receiver<T>) {
    let q = Arc::new(Queue::new());
    (
        Sender {
            queue: Arc::clone(&q),
        },
        Receiver { queue: q },
    )
}

/// A producing endpoint; clone freely across threads.
pub struct Sender<T> {
    queue: Arc<Queue<T>>,
}

impl<T> Clone for Sender<T> {
    fn clone(&self) -> Self {
        Sender {
            queue: Arc::clone(&self.queue),
        }
    }
}

impl<T> Sender<T> {
    /// Appends an item without blocking.
    pub fn send(&self, item: T) -> Result<(), ChannelClosed<T>> {
        self.queue.send(item)
    }

    pub fn close(&self) {
        self.queue.close();
    }

    pub fn is_closed(&self) -> bool {
        self.queue.is_closed()
    }
}

/// The unique consuming endpoint.
pub struct Receiver<T> {
    queue: Arc<Queue<T>>,
}

impl<T> Receiver<T> {
    /// Blocks until an item arrives; `Err(Closed)` after close and drain.
    pub fn recv(&self) -> Result<T, Closed> {
        self.queue.recv()
    }

    pub fn close(&self) {
        self.queue.close();
    }
}

impl<T> Drop for Receiver<T> {
    fn drop(&mut self) {
        self.queue.close();
    }
}
