//! Super-block bookkeeping: erase counts, valid-page bitmaps, the free pool
//! and GC victim selection.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::time::SimTime;

/// Which write stream owns an open super-block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stream {
    /// Full super-page host writes.
    Host,
    /// Per-slot remapped pages from partial super-page writes.
    Partial,
    /// Garbage-collection migrations.
    Gc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockState {
    Free,
    Open(Stream),
    Closed,
}

#[derive(Clone, Debug)]
pub struct BlockMetadata {
    pub erase_count: u32,
    /// One bit per physical page, indexed `page * slots + slot`.
    valid: Vec<u64>,
    pub valid_count: u32,
    pub last_modified: SimTime,
    pub state: BlockState,
    /// Next aligned page for host/GC streams.
    pub next_page: u32,
    /// Per-slot next page for the partial stream.
    pub slot_cursor: Vec<u32>,
}

impl BlockMetadata {
    pub fn new(slots: u32, pages: u32) -> Self {
        BlockMetadata {
            erase_count: 0,
            valid: vec![0; ((slots * pages) as usize).div_ceil(64)],
            valid_count: 0,
            last_modified: SimTime::ZERO,
            state: BlockState::Free,
            next_page: 0,
            slot_cursor: Vec::new(),
        }
    }

    pub fn is_valid(&self, bit: usize) -> bool {
        self.valid[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn set_valid(&mut self, bit: usize) {
        debug_assert!(!self.is_valid(bit));
        self.valid[bit / 64] |= 1 << (bit % 64);
        self.valid_count += 1;
    }

    pub fn clear_valid(&mut self, bit: usize) {
        debug_assert!(self.is_valid(bit));
        self.valid[bit / 64] &= !(1 << (bit % 64));
        self.valid_count -= 1;
    }

    pub fn popcount(&self) -> u32 {
        self.valid.iter().map(|w| w.count_ones()).sum()
    }

    pub fn valid_bits(&self) -> impl Iterator<Item = usize> + '_ {
        self.valid.iter().enumerate().flat_map(|(i, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(i * 64 + b)
            })
        })
    }

    pub fn reset_after_erase(&mut self) {
        debug_assert_eq!(self.valid_count, 0);
        self.valid.iter_mut().for_each(|w| *w = 0);
        self.erase_count += 1;
        self.next_page = 0;
        self.slot_cursor.clear();
        self.state = BlockState::Free;
    }

    /// Pages programmed since the last erase.
    pub fn programmed(&self, slots: u32) -> u64 {
        if self.slot_cursor.is_empty() {
            self.next_page as u64 * slots as u64
        } else {
            self.slot_cursor.iter().map(|c| *c as u64).sum()
        }
    }
}

/// Free super-blocks ordered by erase count, then id.
#[derive(Clone, Debug, Default)]
pub struct FreePool {
    set: BTreeSet<(u32, u32)>,
}

impl FreePool {
    pub fn insert(&mut self, erase_count: u32, id: u32) {
        self.set.insert((erase_count, id));
    }

    /// Least-worn free block; ties go to the lowest id.
    pub fn pop_least_worn(&mut self) -> Option<u32> {
        self.set.pop_first().map(|(_, id)| id)
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }
}

/// What a victim policy sees of one candidate block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VictimCandidate {
    pub id: u32,
    pub valid_count: u32,
    pub erase_count: u32,
    pub last_modified: SimTime,
}

/// Minimal valid count; ties by lowest erase count, then lowest id.
pub fn greedy_victim(candidates: &[VictimCandidate]) -> Option<u32> {
    candidates
        .iter()
        .min_by_key(|c| (c.valid_count, c.erase_count, c.id))
        .map(|c| c.id)
}

/// Cost-benefit score `age * (1 - u) / (2u)` held as an exact fraction.
/// `u = 0` is an infinite score.
#[derive(Clone, Copy, Debug)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn of(c: &VictimCandidate, slots: u32, now: SimTime) -> Score {
        let age = now.saturating_sub(c.last_modified).as_ps() as u128;
        let v = c.valid_count.min(slots) as u128;
        // age * (S - v)/S  /  (2 v / S)  =  age * (S - v) / (2 v)
        Score {
            num: age * (slots as u128 - v),
            den: 2 * v,
        }
    }

    fn cmp(&self, other: &Score) -> Ordering {
        match (self.den == 0, other.den == 0) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Greater,
            (false, true) => Ordering::Less,
            _ => match (
                self.num.checked_mul(other.den),
                other.num.checked_mul(self.den),
            ) {
                (Some(a), Some(b)) => a.cmp(&b),
                _ => (self.num as f64 / self.den as f64)
                    .total_cmp(&(other.num as f64 / other.den as f64)),
            },
        }
    }
}

/// Maximal cost-benefit score; blocks with no valid pages win outright.
/// Ties go to the lowest erase count, then the lowest id.
pub fn cost_benefit_victim(candidates: &[VictimCandidate], slots: u32, now: SimTime) -> Option<u32> {
    let mut best: Option<(&VictimCandidate, Score)> = None;
    for c in candidates {
        let s = Score::of(c, slots, now);
        best = match best {
            None => Some((c, s)),
            Some((b, bs)) => {
                let better = match s.cmp(&bs) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => (c.erase_count, c.id) < (b.erase_count, b.id),
                };
                if better {
                    Some((c, s))
                } else {
                    Some((b, bs))
                }
            }
        };
    }
    best.map(|(c, _)| c.id)
}
