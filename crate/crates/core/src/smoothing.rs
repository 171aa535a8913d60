//! Majority vote over a sliding window of recent labels.

use std::collections::VecDeque;

use thiserror::Error;

pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmoothingError {
    #[error("frame {got} pushed after frame {last}")]
    OutOfOrder { last: u64, got: u64 },
}

/// Ring of the most recent `(label, frame_id)` pairs.
///
/// The smoothed value is the most frequent label in the buffer. Among tied
/// labels the one pushed most recently wins.
#[derive(Debug, Clone)]
pub struct SmoothingBuffer<L> {
    capacity: usize,
    entries: VecDeque<(L, u64)>,
}

impl<L: Clone + PartialEq> SmoothingBuffer<L> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "smoothing window must hold at least one entry");
        Self { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.entries.back().map(|(_, f)| *f)
    }

    pub fn push(&mut self, label: L, frame_id: u64) -> Result<L, SmoothingError> {
        if let Some(last) = self.last_frame() {
            if frame_id <= last {
                return Err(SmoothingError::OutOfOrder { last, got: frame_id });
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((label, frame_id));
        Ok(self.mode().expect("buffer is non-empty after push").clone())
    }

    /// Current smoothed label, `None` when empty.
    pub fn mode(&self) -> Option<&L> {
        // Walk newest to oldest so the first label reaching the best count is the most recent.
        let mut best: Option<(&L, usize)> = None;
        for (i, (label, _)) in self.entries.iter().enumerate().rev() {
            if self.entries.iter().skip(i + 1).any(|(l, _)| l == label) {
                continue;
            }
            let count = self.entries.iter().filter(|(l, _)| l == label).count();
            if best.map_or(true, |(_, c)| count > c) {
                best = Some((label, count));
            }
        }
        best.map(|(l, _)| l)
    }

    pub fn reset(&mut self) {
        self.entries.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feed(buf: &mut SmoothingBuffer<&'static str>, labels: &[&'static str]) -> &'static str {
        let start = buf.last_frame().map_or(0, |f| f + 1);
        let mut out = "";
        for (i, l) in labels.iter().enumerate() {
            out = buf.push(l, start + i as u64).unwrap();
        }
        out
    }

    #[test]
    fn unanimous() {
        let mut b = SmoothingBuffer::new(10);
        assert_eq!(feed(&mut b, &["drilling"; 10]), "drilling");
    }

    #[test]
    fn majority_wins() {
        let mut b = SmoothingBuffer::new(10);
        let seq = ["sawing", "idle", "sawing", "sawing", "idle", "sawing", "idle", "sawing", "idle", "sawing"];
        assert_eq!(feed(&mut b, &seq), "sawing");
    }

    #[test]
    fn tie_goes_to_most_recent() {
        let mut b = SmoothingBuffer::new(10);
        feed(&mut b, &["idle"; 5]);
        assert_eq!(feed(&mut b, &["sawing"; 5]), "sawing");
        // the tie-break looks at the latest occurrence, not the latest block
        let mut b = SmoothingBuffer::new(4);
        assert_eq!(feed(&mut b, &["a", "b", "b", "a"]), "a");
    }

    #[test]
    fn partial_window_uses_available() {
        let mut b = SmoothingBuffer::new(10);
        assert_eq!(feed(&mut b, &["idle"]), "idle");
        assert_eq!(feed(&mut b, &["sawing", "sawing"]), "sawing");
    }

    #[test]
    fn out_of_order_rejected() {
        let mut b = SmoothingBuffer::new(3);
        b.push("a", 5).unwrap();
        assert_eq!(b.push("a", 5), Err(SmoothingError::OutOfOrder { last: 5, got: 5 }));
        assert!(b.push("a", 4).is_err());
        assert!(b.push("a", 6).is_ok());
    }

    #[test]
    fn reset_clears_history() {
        let mut b = SmoothingBuffer::new(10);
        feed(&mut b, &["sawing"; 9]);
        b.reset();
        assert!(b.is_empty());
        assert_eq!(b.push("idle", 100).unwrap(), "idle");
        let mut e: SmoothingBuffer<&str> = SmoothingBuffer::new(2);
        e.reset();
        assert!(e.is_empty());
        assert_eq!(e.mode(), None);
    }

    #[test]
    fn capacity_bounds_buffer() {
        let mut b = SmoothingBuffer::new(3);
        feed(&mut b, &["a", "a", "a", "b", "b"]);
        assert_eq!(b.len(), 3);
        assert_eq!(b.mode(), Some(&"b"));
    }

    #[test]
    fn switch_latency_from_unanimous() {
        for cap in 1..=15usize {
            let mut b = SmoothingBuffer::new(cap);
            feed(&mut b, &vec!["a"; cap]);
            let mut k = 0;
            loop {
                k += 1;
                if feed(&mut b, &["b"]) == "b" {
                    break;
                }
            }
            assert!(k <= cap.div_ceil(2) + 1, "capacity {cap} switched after {k}");
        }
    }
}
