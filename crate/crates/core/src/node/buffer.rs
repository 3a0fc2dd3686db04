use std::collections::VecDeque;

/// Ring of serialized readings waiting for a successful uplink.
///
/// When full, the oldest record is overwritten. The overwrite count is kept
/// so that produced = delivered + buffered + overwritten can be audited.
#[derive(Debug, Clone)]
pub struct FlashBuffer {
    capacity: usize,
    records: VecDeque<Vec<u8>>,
    overwritten: u64,
}

impl FlashBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(
            capacity > 0,
            "flash buffer needs room for at least one record"
        );
        FlashBuffer {
            capacity,
            records: VecDeque::with_capacity(capacity),
            overwritten: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn overwritten(&self) -> u64 {
        self.overwritten
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<u8>> {
        self.records.iter()
    }

    /// Appends a record as the newest entry.
    pub fn push(&mut self, record: Vec<u8>) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
            self.overwritten += 1;
        }
        self.records.push_back(record);
    }

    /// Puts records taken by [`take_batch`](Self::take_batch) back at the head,
    /// keeping their order. If that overflows, the oldest are overwritten.
    pub fn restore_front(&mut self, records: Vec<Vec<u8>>) {
        for r in records.into_iter().rev() {
            self.records.push_front(r);
        }
        while self.records.len() > self.capacity {
            self.records.pop_front();
            self.overwritten += 1;
        }
    }

    /// Removes up to `max_records` oldest records whose framed sizes
    /// (`record + per_record_overhead`) fit within `byte_budget`.
    pub fn take_batch(
        &mut self,
        max_records: usize,
        byte_budget: usize,
        per_record_overhead: usize,
    ) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        let mut used = 0;
        while out.len() < max_records {
            let Some(next) = self.records.front() else {
                break;
            };
            let cost = next.len() + per_record_overhead;
            if used + cost > byte_budget {
                break;
            }
            used += cost;
            out.push(self.records.pop_front().unwrap());
        }
        out
    }
}
