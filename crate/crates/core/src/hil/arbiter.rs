//! Submission-queue arbitration for the fetch engine.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arbitration {
    /// Global publication order across queues.
    Fifo,
    /// Round-robin over non-empty queues.
    Rr,
    /// Weighted round-robin with per-queue deficit counters.
    Wrr,
}

#[derive(Clone, Debug, Default)]
struct QueueState {
    pending: u64,
    weight: u32,
    deficit: u32,
}

#[derive(Clone, Debug)]
pub struct Arbiter {
    mode: Arbitration,
    queues: BTreeMap<u16, QueueState>,
    order: VecDeque<u16>,
    current: Option<u16>,
}

impl Arbiter {
    pub fn new(mode: Arbitration) -> Self {
        Arbiter {
            mode,
            queues: BTreeMap::new(),
            order: VecDeque::new(),
            current: None,
        }
    }

    pub fn add_queue(&mut self, qid: u16, weight: u32) {
        self.queues.insert(
            qid,
            QueueState {
                weight: weight.max(1),
                ..QueueState::default()
            },
        );
    }

    pub fn remove_queue(&mut self, qid: u16) {
        self.queues.remove(&qid);
        self.order.retain(|q| *q != qid);
        if self.current == Some(qid) {
            self.current = None;
        }
    }

    /// `n` new entries became visible on `qid`.
    pub fn publish(&mut self, qid: u16, n: u64) {
        if let Some(q) = self.queues.get_mut(&qid) {
            q.pending += n;
            if self.mode == Arbitration::Fifo {
                self.order.extend(std::iter::repeat_n(qid, n as usize));
            }
        }
    }

    pub fn pending(&self) -> u64 {
        self.queues.values().map(|q| q.pending).sum()
    }

    /// Queue whose next entry should be fetched.
    pub fn next(&mut self) -> Option<u16> {
        let qid = match self.mode {
            Arbitration::Fifo => self.order.pop_front()?,
            Arbitration::Rr => self.next_after(self.current)?,
            Arbitration::Wrr => self.next_wrr()?,
        };
        let q = self.queues.get_mut(&qid).expect("arbitrated queue exists");
        q.pending -= 1;
        self.current = Some(qid);
        Some(qid)
    }

    /// First non-empty queue strictly after `after`, wrapping around.
    fn next_after(&self, after: Option<u16>) -> Option<u16> {
        let start = after.map_or(0, |q| q as u32 + 1);
        self.queues
            .range(start.min(u16::MAX as u32 + 1) as u16..)
            .filter(|_| start <= u16::MAX as u32)
            .chain(self.queues.range(..))
            .find(|(_, q)| q.pending > 0)
            .map(|(id, _)| *id)
    }

    fn next_wrr(&mut self) -> Option<u16> {
        if let Some(cur) = self.current {
            if let Some(q) = self.queues.get_mut(&cur) {
                if q.pending > 0 && q.deficit > 0 {
                    q.deficit -= 1;
                    return Some(cur);
                }
                q.deficit = 0;
            }
        }
        let next = self.next_after(self.current)?;
        let q = self.queues.get_mut(&next).unwrap();
        q.deficit = q.weight - 1;
        Some(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(a: &mut Arbiter, n: usize) -> Vec<u16> {
        (0..n).filter_map(|_| a.next()).collect()
    }

    #[test]
    fn single_queue_is_order_preserving() {
        for mode in [Arbitration::Fifo, Arbitration::Rr, Arbitration::Wrr] {
            let mut a = Arbiter::new(mode);
            a.add_queue(1, 3);
            a.publish(1, 5);
            assert_eq!(drain(&mut a, 10), vec![1; 5]);
        }
    }

    #[test]
    fn rr_alternates() {
        let mut a = Arbiter::new(Arbitration::Rr);
        a.add_queue(1, 1);
        a.add_queue(2, 1);
        a.publish(1, 4);
        a.publish(2, 4);
        assert_eq!(drain(&mut a, 8), vec![1, 2, 1, 2, 1, 2, 1, 2]);
    }

    #[test]
    fn fifo_follows_publication() {
        let mut a = Arbiter::new(Arbitration::Fifo);
        a.add_queue(1, 1);
        a.add_queue(2, 1);
        a.publish(2, 2);
        a.publish(1, 1);
        assert_eq!(drain(&mut a, 3), vec![2, 2, 1]);
    }

    #[test]
    fn wrr_three_to_one() {
        let mut a = Arbiter::new(Arbitration::Wrr);
        a.add_queue(1, 3);
        a.add_queue(2, 1);
        a.publish(1, 1000);
        a.publish(2, 1000);
        let got = drain(&mut a, 400);
        assert_eq!(got.iter().filter(|q| **q == 1).count(), 300);
        assert_eq!(&got[..8], &[1, 1, 1, 2, 1, 1, 1, 2]);
    }

    #[test]
    fn high_qids_wrap() {
        let mut a = Arbiter::new(Arbitration::Rr);
        a.add_queue(u16::MAX, 1);
        a.add_queue(3, 1);
        a.publish(u16::MAX, 2);
        a.publish(3, 2);
        assert_eq!(drain(&mut a, 4), vec![3, u16::MAX, 3, u16::MAX]);
    }
}
