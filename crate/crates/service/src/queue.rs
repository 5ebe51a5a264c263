//! Pull-based claim queue over one epoch's pairs.

use std::time::{Duration, Instant};

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClaimState {
    Unclaimed,
    Claimed(Instant),
    Labeled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairQueueEntry {
    pub pair_id: u64,
    pub claim: ClaimState,
    pub image_ids: [String; 2],
}

impl PairQueueEntry {
    pub fn new(pair_id: u64) -> Self {
        Self {
            pair_id,
            claim: ClaimState::Unclaimed,
            image_ids: [format!("{pair_id}-a"), format!("{pair_id}-b")],
        }
    }

    fn available(&self, now: Instant, timeout: Duration) -> bool {
        match self.claim {
            ClaimState::Unclaimed => true,
            ClaimState::Claimed(at) => now.saturating_duration_since(at) >= timeout,
            ClaimState::Labeled => false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QueueCounts {
    pub queued: usize,
    pub claimed: usize,
    pub labeled: usize,
}

/// Entries in enqueue order; the oldest available entry is served first.
#[derive(Debug, Clone)]
pub struct PairQueue {
    entries: Vec<PairQueueEntry>,
    timeout: Duration,
}

impl PairQueue {
    pub fn new(timeout: Duration) -> Self {
        Self {
            entries: Vec::new(),
            timeout,
        }
    }

    pub fn push(&mut self, entry: PairQueueEntry) {
        self.entries.push(entry);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PairQueueEntry] {
        &self.entries
    }

    pub fn get(&self, pair_id: u64) -> Option<&PairQueueEntry> {
        self.entries.iter().find(|e| e.pair_id == pair_id)
    }

    /// Claims the oldest unclaimed entry; expired claims count as unclaimed.
    pub fn claim_next(&mut self, now: Instant) -> Option<u64> {
        let timeout = self.timeout;
        let entry = self.entries.iter_mut().find(|e| e.available(now, timeout))?;
        entry.claim = ClaimState::Claimed(now);
        Some(entry.pair_id)
    }

    /// Returns `false` when the entry is already labeled.
    pub fn mark_labeled(&mut self, pair_id: u64) -> Option<bool> {
        let entry = self.entries.iter_mut().find(|e| e.pair_id == pair_id)?;
        if entry.claim == ClaimState::Labeled {
            return Some(false);
        }
        entry.claim = ClaimState::Labeled;
        Some(true)
    }

    pub fn counts(&self, now: Instant) -> QueueCounts {
        let mut c = QueueCounts::default();
        for e in &self.entries {
            match e.claim {
                ClaimState::Labeled => c.labeled += 1,
                _ if e.available(now, self.timeout) => c.queued += 1,
                _ => c.claimed += 1,
            }
        }
        c
    }

    pub fn remaining(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.claim != ClaimState::Labeled)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn queue(n: u64, timeout: Duration) -> PairQueue {
        let mut q = PairQueue::new(timeout);
        (0..n).for_each(|i| q.push(PairQueueEntry::new(i)));
        q
    }

    #[test]
    fn serves_oldest_first_then_empty() {
        let mut q = queue(2, Duration::from_secs(60));
        let now = Instant::now();
        assert_eq!(q.claim_next(now), Some(0));
        assert_eq!(q.claim_next(now), Some(1));
        assert_eq!(q.claim_next(now), None);
        assert_eq!(q.counts(now), QueueCounts { queued: 0, claimed: 2, labeled: 0 });
    }

    #[test]
    fn expired_claim_is_served_again() {
        let mut q = queue(1, Duration::from_secs(5));
        let t0 = Instant::now();
        assert_eq!(q.claim_next(t0), Some(0));
        assert_eq!(q.claim_next(t0 + Duration::from_secs(4)), None);
        assert_eq!(q.claim_next(t0 + Duration::from_secs(5)), Some(0));
    }

    #[test]
    fn labeled_entries_never_return() {
        let mut q = queue(2, Duration::ZERO);
        let now = Instant::now();
        assert_eq!(q.mark_labeled(0), Some(true));
        assert_eq!(q.mark_labeled(0), Some(false));
        assert_eq!(q.mark_labeled(7), None);
        for _ in 0..3 {
            assert_eq!(q.claim_next(now), Some(1));
        }
        assert_eq!(q.remaining(), 1);
    }
}
