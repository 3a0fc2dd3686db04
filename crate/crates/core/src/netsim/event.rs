use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    SampleTimer {
        uid: u64,
    },
    UplinkTx {
        uid: u64,
    },
    UplinkArrival {
        uid: u64,
        payload: Vec<u8>,
    },
    DownlinkQueue {
        uid: u64,
        ticket: u64,
        bytes: Vec<u8>,
    },
    ListenWindow {
        uid: u64,
    },
    WatchdogCheck {
        uid: u64,
    },
    HangInjection {
        uid: u64,
    },
    ResetDone {
        uid: u64,
    },
}

impl EventKind {
    pub fn uid(&self) -> u64 {
        match self {
            EventKind::SampleTimer { uid }
            | EventKind::UplinkTx { uid }
            | EventKind::UplinkArrival { uid, .. }
            | EventKind::DownlinkQueue { uid, .. }
            | EventKind::ListenWindow { uid }
            | EventKind::WatchdogCheck { uid }
            | EventKind::HangInjection { uid }
            | EventKind::ResetDone { uid } => *uid,
        }
    }
}

/// Ordered by `(at, seq)` only.
#[derive(Debug, Clone)]
pub struct Event {
    pub at: u64,
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, at: u64, kind: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event { at, seq, kind }));
        seq
    }

    pub fn peek_at(&self) -> Option<u64> {
        self.heap.peek().map(|e| e.0.at)
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|e| e.0)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Removes and returns all remaining events in order.
    pub fn drain_sorted(&mut self) -> Vec<Event> {
        std::iter::from_fn(|| self.pop()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_then_insertion_order() {
        let mut q = EventQueue::default();
        q.push(10, EventKind::SampleTimer { uid: 1 });
        q.push(5, EventKind::SampleTimer { uid: 2 });
        q.push(10, EventKind::SampleTimer { uid: 3 });
        q.push(5, EventKind::SampleTimer { uid: 4 });
        let order: Vec<u64> = q.drain_sorted().iter().map(|e| e.kind.uid()).collect();
        assert_eq!(order, vec![2, 4, 1, 3]);
    }
}
