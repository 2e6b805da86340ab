//! Bucketed event queue ordered by `(time, ordinal)`.
//!
//! Pending events are binned by `⌊t/width⌋`. The earliest bucket is sorted
//! when it becomes current; events scheduled into the current bucket while it
//! drains go to a small heap that is merged on the fly. Pop order is exactly
//! the order of a binary heap over `(time bits, ordinal)`.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

type Entry = (u64, u32);

/// Buckets further ahead than this go to an overflow heap.
const MAX_AHEAD: u64 = 1 << 20;

#[derive(Clone, Debug)]
pub(crate) struct EventQueue {
    inv_width: f64,
    /// Index of the bucket in `current`, if one is loaded.
    cur_bucket: Option<u64>,
    current: Vec<Entry>,
    pos: usize,
    spill: BinaryHeap<Reverse<Entry>>,
    /// `future[k]` holds bucket `base + k`.
    base: u64,
    future: VecDeque<Vec<Entry>>,
    far: BinaryHeap<Reverse<Entry>>,
    len: usize,
}

impl EventQueue {
    pub(crate) fn new(width: f64) -> Self {
        assert!(width > 0.0 && width.is_finite());
        EventQueue {
            inv_width: 1.0 / width,
            cur_bucket: None,
            current: Vec::new(),
            pos: 0,
            spill: BinaryHeap::new(),
            base: 0,
            future: VecDeque::new(),
            far: BinaryHeap::new(),
            len: 0,
        }
    }

    #[inline]
    fn bucket_of(&self, key: u64) -> u64 {
        let b = f64::from_bits(key) * self.inv_width;
        if b >= u64::MAX as f64 {
            u64::MAX
        } else {
            b as u64
        }
    }

    #[cfg(test)]
    pub(crate) fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub(crate) fn push(&mut self, key: u64, ordinal: u32) {
        self.len += 1;
        let b = self.bucket_of(key);
        if let Some(cur) = self.cur_bucket {
            if b <= cur {
                self.spill.push(Reverse((key, ordinal)));
                return;
            }
        }
        if b < self.base {
            // Only possible before the first load, when base is 0.
            self.spill.push(Reverse((key, ordinal)));
            return;
        }
        let ahead = b - self.base;
        if ahead >= MAX_AHEAD {
            self.far.push(Reverse((key, ordinal)));
            return;
        }
        let ahead = ahead as usize;
        if self.future.len() <= ahead {
            self.future.resize_with(ahead + 1, Vec::new);
        }
        self.future[ahead].push((key, ordinal));
    }

    /// Loads the next nonempty bucket once the current one is drained.
    fn refill(&mut self) {
        while self.pos >= self.current.len() && self.spill.is_empty() {
            if self.future.is_empty() {
                let Some(&Reverse(first)) = self.far.peek() else { return };
                self.base = self.bucket_of(first.0);
                let far = std::mem::take(&mut self.far);
                self.len -= far.len();
                for Reverse((k, o)) in far.into_vec() {
                    self.push(k, o);
                }
                continue;
            }
            let mut bucket = self.future.pop_front().unwrap_or_default();
            let index = self.base;
            self.base = self.base.saturating_add(1);
            if bucket.is_empty() {
                continue;
            }
            bucket.sort_unstable();
            self.current = bucket;
            self.pos = 0;
            self.cur_bucket = Some(index);
        }
    }

    #[inline]
    pub(crate) fn peek(&mut self) -> Option<Entry> {
        if self.pos >= self.current.len() && self.spill.is_empty() {
            self.refill();
        }
        let a = self.current.get(self.pos).copied();
        let b = self.spill.peek().map(|r| r.0);
        match (a, b) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, None) => a,
            (None, b) => b,
        }
    }

    #[inline]
    pub(crate) fn pop(&mut self) -> Option<Entry> {
        let top = self.peek()?;
        if self.current.get(self.pos) == Some(&top) {
            self.pos += 1;
        } else {
            self.spill.pop();
        }
        self.len -= 1;
        Some(top)
    }
}
