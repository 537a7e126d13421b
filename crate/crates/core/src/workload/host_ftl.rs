//! Minimal host-side FTL for open-channel runs: an append-only log that
//! fills chunk by chunk, page by page, striping each page row across every
//! parallel unit with channels varying fastest.

use std::collections::HashMap;

use crate::flash::{FlashAddress, FlashGeometry};

pub struct HostFtl {
    geometry: FlashGeometry,
    /// Next (chunk, page, slot) to append at.
    chunk: u32,
    page: u32,
    slot: u32,
    map: HashMap<u64, FlashAddress>,
}

impl HostFtl {
    pub fn new(geometry: &FlashGeometry) -> Self {
        HostFtl {
            geometry: geometry.clone(),
            chunk: 0,
            page: 0,
            slot: 0,
            map: HashMap::new(),
        }
    }

    /// Physical pages left before the log runs off the end of the device.
    pub fn remaining(&self) -> u64 {
        let g = &self.geometry;
        let row = g.total_planes() as u64;
        let rows_done = self.chunk as u64 * g.pages_per_block as u64 + self.page as u64;
        let rows = g.blocks_per_plane as u64 * g.pages_per_block as u64;
        (rows - rows_done) * row - self.slot as u64
    }

    /// Appends logical pages `lpns` and returns where each was placed.
    pub fn append(&mut self, lpns: &[u64]) -> Option<Vec<FlashAddress>> {
        if (lpns.len() as u64) > self.remaining() {
            return None;
        }
        let g = self.geometry.clone();
        let mut out = Vec::with_capacity(lpns.len());
        for &lpn in lpns {
            let a = g.slot_address(self.slot, self.chunk, self.page);
            self.map.insert(lpn, a);
            out.push(a);
            self.slot += 1;
            if self.slot == g.total_planes() {
                self.slot = 0;
                self.page += 1;
                if self.page == g.pages_per_block {
                    self.page = 0;
                    self.chunk += 1;
                }
            }
        }
        Some(out)
    }

    pub fn lookup(&self, lpn: u64) -> Option<FlashAddress> {
        self.map.get(&lpn).copied()
    }
}
