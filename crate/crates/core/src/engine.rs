//! Global virtual clock and priority event queue.
//!
//! Events are ordered by `(fire_at, sequence)`; the sequence is an insertion
//! counter, so events scheduled for the same instant fire in the order they
//! were scheduled. Nothing here depends on wall-clock time or hash iteration
//! order, so identical call sequences always produce identical transcripts.

use std::collections::{BTreeMap, HashMap};

use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

/// A fired event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimEvent<P> {
    pub id: EventId,
    pub fire_at: SimTime,
    pub sequence: u64,
    pub payload: P,
}

#[derive(Debug)]
pub struct EventQueue<P> {
    now: SimTime,
    next_sequence: u64,
    pending: BTreeMap<(SimTime, u64), (EventId, P)>,
    keys: HashMap<EventId, (SimTime, u64)>,
    scheduled: u64,
    fired: u64,
    cancelled: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            now: SimTime::ZERO,
            next_sequence: 0,
            pending: BTreeMap::new(),
            keys: HashMap::new(),
            scheduled: 0,
            fired: 0,
            cancelled: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Enqueues `payload` to fire at `fire_at`.
    ///
    /// Scheduling in the past is a logic error in the caller and aborts.
    pub fn schedule(&mut self, fire_at: SimTime, payload: P) -> EventId {
        assert!(
            fire_at >= self.now,
            "event scheduled in the past: fire_at={fire_at} now={}",
            self.now
        );
        self.next_sequence += 1;
        let seq = self.next_sequence;
        let id = EventId(seq);
        self.pending.insert((fire_at, seq), (id, payload));
        self.keys.insert(id, (fire_at, seq));
        self.scheduled += 1;
        id
    }

    /// Pops the earliest event and moves the clock to its timestamp.
    pub fn advance(&mut self) -> Option<SimEvent<P>> {
        let ((fire_at, sequence), (id, payload)) = self.pending.pop_first()?;
        self.keys.remove(&id);
        debug_assert!(fire_at >= self.now);
        self.now = fire_at;
        self.fired += 1;
        Some(SimEvent {
            id,
            fire_at,
            sequence,
            payload,
        })
    }

    pub fn cancel(&mut self, id: EventId) -> bool {
        match self.keys.remove(&id) {
            Some(key) => {
                self.pending.remove(&key);
                self.cancelled += 1;
                true
            }
            None => false,
        }
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.pending.keys().next().map(|(t, _)| *t)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn scheduled_count(&self) -> u64 {
        self.scheduled
    }

    pub fn fired_count(&self) -> u64 {
        self.fired
    }

    pub fn cancelled_count(&self) -> u64 {
        self.cancelled
    }
}
