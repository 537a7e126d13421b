//! Exclusive resource reservations on the simulated time axis.
//!
//! Firmware computes a command's whole pipeline when it is fetched, so a
//! resource (channel bus, PCIe link, DRAM channel) receives reservations out
//! of time order: a read books its data-out phase tens of microseconds ahead
//! while a later command may still fit into the idle gap before it. A
//! `Timeline` keeps the busy intervals and places each reservation into the
//! earliest gap that can hold it.

use std::collections::BTreeMap;

use crate::time::SimTime;

#[derive(Clone, Debug, Default)]
pub struct Timeline {
    // start -> end, non-overlapping, non-touching
    busy: BTreeMap<SimTime, SimTime>,
    busy_total: SimTime,
}

impl Timeline {
    pub fn new() -> Self {
        Self::default()
    }

    /// Earliest start `>= earliest` at which `[start, start + duration)` is free.
    pub fn find_slot(&self, earliest: SimTime, duration: SimTime) -> SimTime {
        let mut t = earliest;
        if let Some((_, &end)) = self.busy.range(..=t).next_back() {
            if end > t {
                t = end;
            }
        }
        if duration == SimTime::ZERO {
            return t;
        }
        for (&start, &end) in self.busy.range(t..) {
            if start >= t + duration {
                break;
            }
            t = t.max(end);
        }
        t
    }

    /// Books the earliest fitting gap and returns its start.
    pub fn reserve(&mut self, earliest: SimTime, duration: SimTime) -> SimTime {
        let start = self.find_slot(earliest, duration);
        if duration > SimTime::ZERO {
            self.insert(start, start + duration);
        }
        start
    }

    /// Books `[start, start + duration)` exactly; the caller must have checked
    /// that it is free.
    pub fn occupy(&mut self, start: SimTime, duration: SimTime) {
        debug_assert_eq!(self.find_slot(start, duration), start, "interval overlaps");
        if duration > SimTime::ZERO {
            self.insert(start, start + duration);
        }
    }

    fn insert(&mut self, mut start: SimTime, mut end: SimTime) {
        self.busy_total += end - start;
        if let Some((&s, &e)) = self.busy.range(..=start).next_back() {
            if e == start {
                self.busy.remove(&s);
                start = s;
            }
        }
        if let Some(&e) = self.busy.get(&end) {
            self.busy.remove(&end);
            end = e;
        }
        self.busy.insert(start, end);
    }

    /// Drops intervals that ended at or before `now`; no future reservation
    /// can start before the current simulated time.
    pub fn retire(&mut self, now: SimTime) {
        while let Some((&s, &e)) = self.busy.first_key_value() {
            if e <= now {
                self.busy.remove(&s);
            } else {
                break;
            }
        }
    }

    /// End of the last booked interval.
    pub fn horizon(&self) -> SimTime {
        self.busy
            .last_key_value()
            .map(|(_, e)| *e)
            .unwrap_or(SimTime::ZERO)
    }

    /// Total reserved time since creation.
    pub fn busy_total(&self) -> SimTime {
        self.busy_total
    }

    pub fn intervals(&self) -> usize {
        self.busy.len()
    }

    pub fn clear(&mut self) {
        self.busy.clear();
    }
}
