//! Fan-out of joined results to subscribers.
//!
//! Replay sessions block the publisher while a subscriber's frame queue is
//! full. Live sessions drop the oldest queued frame instead. Events are never
//! dropped in either mode.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use crate::scenario::GuidanceEvent;

use super::JoinedResult;

#[derive(Debug, Clone, PartialEq)]
pub enum Delivery {
    Frame(Arc<JoinedResult>),
    Event(GuidanceEvent),
}

#[derive(Default)]
struct QueueState {
    items: VecDeque<Delivery>,
    frames: usize,
    closed: bool,
    detached: bool,
    dropped: u64,
}

struct Queue {
    state: Mutex<QueueState>,
    readable: Condvar,
    writable: Condvar,
    capacity: usize,
    lossy: bool,
}

impl Queue {
    fn new(capacity: usize, lossy: bool, closed: bool) -> Self {
        Self {
            state: Mutex::new(QueueState { closed, ..Default::default() }),
            readable: Condvar::new(),
            writable: Condvar::new(),
            capacity,
            lossy,
        }
    }

    fn push_frame(&self, frame: Arc<JoinedResult>, events: &[GuidanceEvent]) {
        let mut st = self.state.lock().expect("subscriber queue");
        if st.detached {
            return;
        }
        if self.lossy {
            while st.frames >= self.capacity {
                let pos = st.items.iter().position(|d| matches!(d, Delivery::Frame(_)));
                let Some(pos) = pos else { break };
                st.items.remove(pos);
                st.frames -= 1;
                st.dropped += 1;
            }
        } else {
            while st.frames >= self.capacity && !st.detached {
                st = self.writable.wait(st).expect("subscriber queue");
            }
            if st.detached {
                return;
            }
        }
        st.items.push_back(Delivery::Frame(frame));
        st.frames += 1;
        st.items.extend(events.iter().cloned().map(Delivery::Event));
        self.readable.notify_all();
    }

    fn close(&self) {
        self.state.lock().expect("subscriber queue").closed = true;
        self.readable.notify_all();
    }
}

/// Receiving end of a session's result stream.
pub struct Subscription {
    queue: Arc<Queue>,
}

impl Subscription {
    fn take(&self, st: &mut QueueState) -> Option<Delivery> {
        let d = st.items.pop_front()?;
        if matches!(d, Delivery::Frame(_)) {
            st.frames -= 1;
            self.queue.writable.notify_all();
        }
        Some(d)
    }

    /// Blocks until the next delivery; `None` once the session has ended and the queue is drained.
    pub fn recv(&self) -> Option<Delivery> {
        let mut st = self.queue.state.lock().expect("subscriber queue");
        loop {
            if let Some(d) = self.take(&mut st) {
                return Some(d);
            }
            if st.closed {
                return None;
            }
            st = self.queue.readable.wait(st).expect("subscriber queue");
        }
    }

    /// `Ok(None)` means end of stream, `Err(())` a timeout.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Delivery>, ()> {
        let mut st = self.queue.state.lock().expect("subscriber queue");
        loop {
            if let Some(d) = self.take(&mut st) {
                return Ok(Some(d));
            }
            if st.closed {
                return Ok(None);
            }
            let (guard, res) = self.queue.readable.wait_timeout(st, timeout).expect("subscriber queue");
            st = guard;
            if res.timed_out() {
                return match self.take(&mut st) {
                    Some(d) => Ok(Some(d)),
                    None if st.closed => Ok(None),
                    None => Err(()),
                };
            }
        }
    }

    /// Frames discarded because this subscriber fell behind a live session.
    pub fn dropped_frames(&self) -> u64 {
        self.queue.state.lock().expect("subscriber queue").dropped
    }
}

impl Iterator for Subscription {
    type Item = Delivery;
    fn next(&mut self) -> Option<Delivery> {
        self.recv()
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.queue.state.lock().expect("subscriber queue").detached = true;
        self.queue.writable.notify_all();
    }
}

pub struct Hub {
    subscribers: Mutex<(Vec<Arc<Queue>>, bool)>,
    capacity: usize,
    lossy: bool,
}

impl Hub {
    pub fn new(capacity: usize, lossy: bool) -> Self {
        Self { subscribers: Mutex::new((Vec::new(), false)), capacity: capacity.max(1), lossy }
    }

    pub fn subscribe(&self) -> Subscription {
        let mut subs = self.subscribers.lock().expect("hub");
        let queue = Arc::new(Queue::new(self.capacity, self.lossy, subs.1));
        if !subs.1 {
            subs.0.push(queue.clone());
        }
        Subscription { queue }
    }

    pub fn publish(&self, result: JoinedResult) {
        let queues: Vec<Arc<Queue>> = {
            let mut subs = self.subscribers.lock().expect("hub");
            subs.0.retain(|q| !q.state.lock().expect("subscriber queue").detached);
            subs.0.clone()
        };
        if queues.is_empty() {
            return;
        }
        let events = result.events.clone();
        let frame = Arc::new(result);
        for q in queues {
            q.push_frame(frame.clone(), &events);
        }
    }

    pub fn close(&self) {
        let mut subs = self.subscribers.lock().expect("hub");
        subs.1 = true;
        for q in subs.0.drain(..) {
            q.close();
        }
    }

    pub fn is_closed(&self) -> bool {
        self.subscribers.lock().expect("hub").1
    }
}
