//! Fixed-length bitmask over the page slots of a super-page.

use smallvec::{smallvec, SmallVec};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SlotMask {
    words: SmallVec<[u64; 2]>,
    len: u32,
}

impl SlotMask {
    pub fn empty(len: u32) -> Self {
        SlotMask {
            words: smallvec![0; (len as usize).div_ceil(64)],
            len,
        }
    }

    pub fn full(len: u32) -> Self {
        let mut m = Self::empty(len);
        m.set_range(0, len);
        m
    }

    pub fn from_slots(len: u32, slots: impl IntoIterator<Item = u32>) -> Self {
        let mut m = Self::empty(len);
        for s in slots {
            m.set(s);
        }
        m
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn get(&self, slot: u32) -> bool {
        debug_assert!(slot < self.len);
        self.words[(slot / 64) as usize] >> (slot % 64) & 1 == 1
    }

    pub fn set(&mut self, slot: u32) {
        assert!(slot < self.len, "slot {slot} out of {}", self.len);
        self.words[(slot / 64) as usize] |= 1 << (slot % 64);
    }

    pub fn unset(&mut self, slot: u32) {
        self.words[(slot / 64) as usize] &= !(1 << (slot % 64));
    }

    pub fn set_range(&mut self, start: u32, end: u32) {
        for s in start..end {
            self.set(s);
        }
    }

    pub fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
    }

    pub fn count(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn is_full(&self) -> bool {
        self.count() == self.len
    }

    pub fn is_subset_of(&self, other: &SlotMask) -> bool {
        self.words
            .iter()
            .zip(other.words.iter())
            .all(|(a, b)| a & !b == 0)
    }

    pub fn union_with(&mut self, other: &SlotMask) {
        for (a, b) in self.words.iter_mut().zip(other.words.iter()) {
            *a |= b;
        }
    }

    pub fn ones(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.len).filter(move |s| self.get(*s))
    }
}
