//! Flash translation layer.
//!
//! Logical super-pages (one page slot per plane of the device) map to
//! physical super-pages. A partial update may redirect individual slots to
//! fresh pages in the same plane through a small per-super-page exception
//! list, which avoids reading and rewriting the clean slots. Garbage
//! collection reclaims super-blocks under a greedy or cost-benefit victim
//! policy and folds exceptions back into a flat super-page while
//! migrating. Free super-blocks are handed out least-worn first.

mod block;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

pub use block::{
    cost_benefit_victim, greedy_victim, BlockMetadata, BlockState, FreePool, Stream,
    VictimCandidate,
};

use crate::flash::{FlashAddress, FlashBackend, FlashError, FlashGeometry, PageBuf};
use crate::mask::SlotMask;
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingMode {
    /// Super-page map with a capped per-slot exception list.
    SuperPage,
    /// Every slot may be remapped independently (no exception cap).
    PageLevel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GcPolicy {
    Greedy,
    Costbenefit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GcMode {
    /// GC blocks the write that found the free pool low.
    Inline,
    /// GC reclaims one victim per idle window; writes only collect inline
    /// when the pool is nearly exhausted.
    Background,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FtlConfig {
    pub mapping: MappingMode,
    pub gc_policy: GcPolicy,
    pub op_ratio: f64,
    /// GC starts when free super-blocks fall below this fraction.
    pub gc_threshold: f64,
    /// GC stops once free super-blocks reach this fraction.
    pub gc_stop_threshold: f64,
    pub gc_mode: GcMode,
    /// Remap only the dirty slots of a partially written super-page.
    pub exception_path: bool,
    /// Exceptions allowed per super-page before a full rewrite. Defaults to
    /// half the slots in super-page mode and unlimited in page-level mode.
    pub exception_cap: Option<u32>,
    /// When set, a full block whose erase count trails the device maximum by
    /// more than this is collected ahead of the policy's choice.
    pub wear_leveling_threshold: Option<u32>,
}

impl Default for FtlConfig {
    fn default() -> Self {
        FtlConfig {
            mapping: MappingMode::SuperPage,
            gc_policy: GcPolicy::Greedy,
            op_ratio: 0.2,
            gc_threshold: 0.05,
            gc_stop_threshold: 0.10,
            gc_mode: GcMode::Inline,
            exception_path: true,
            exception_cap: None,
            wear_leveling_threshold: Some(3),
        }
    }
}

impl FtlConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if !(0.0..1.0).contains(&self.op_ratio) {
            bad.push(format!("ftl.op_ratio {} must be in [0, 1)", self.op_ratio));
        }
        if !(0.0..1.0).contains(&self.gc_threshold) {
            bad.push(format!("ftl.gc_threshold {} must be in [0, 1)", self.gc_threshold));
        }
        if !(0.0..1.0).contains(&self.gc_stop_threshold) {
            bad.push(format!(
                "ftl.gc_stop_threshold {} must be in [0, 1)",
                self.gc_stop_threshold
            ));
        }
        if self.gc_stop_threshold < self.gc_threshold {
            bad.push("ftl.gc_stop_threshold must be >= gc_threshold".into());
        }
        bad
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FtlError {
    #[error("logical super-page {0} beyond logical capacity {1}")]
    OutOfRange(u64, u64),
    #[error("device full: no free super-block and GC cannot reclaim space")]
    DeviceFull,
    #[error("ftl configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Flash(#[from] FlashError),
}

#[derive(Clone, Debug, Default)]
struct Mapping {
    base: Option<u64>,
    /// (slot, block * pages_per_block + page) within the slot's plane.
    exceptions: SmallVec<[(u32, u32); 2]>,
}

impl Mapping {
    fn exception(&self, slot: u32) -> Option<u32> {
        self.exceptions
            .iter()
            .find(|(s, _)| *s == slot)
            .map(|(_, p)| *p)
    }
}

/// Result of a read translation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Translation {
    Unmapped,
    Mapped {
        sppn: Option<u64>,
        /// Slots redirected away from `sppn`, as (slot, block, page).
        exceptions: Vec<(u32, u32, u32)>,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcReport {
    pub victims: u64,
    pub migrated_superpages: u64,
    pub migrated_pages: u64,
    pub reads: u64,
    pub erased_blocks: u64,
    pub stall_time: SimTime,
}

impl GcReport {
    fn absorb(&mut self, o: &GcReport) {
        self.victims += o.victims;
        self.migrated_superpages += o.migrated_superpages;
        self.migrated_pages += o.migrated_pages;
        self.reads += o.reads;
        self.erased_blocks += o.erased_blocks;
        self.stall_time = self.stall_time.max(o.stall_time);
    }
}

#[derive(Clone, Debug)]
pub struct WriteReport {
    pub sppn: Option<u64>,
    pub programs: u64,
    pub reads: u64,
    pub done_at: SimTime,
    pub gc: Option<GcReport>,
}

/// Outcome of a partial super-page update.
#[derive(Clone, Debug)]
pub struct RemapPlan {
    /// Fresh location of every dirty slot.
    pub remapped: Vec<(u32, FlashAddress)>,
    /// True when the exception cap forced a read-modify-write.
    pub fallback: bool,
    pub reads: u64,
    pub programs: u64,
    pub done_at: SimTime,
    pub gc: Option<GcReport>,
}

#[derive(Debug)]
pub struct SlotRead {
    pub slot: u32,
    pub data: Option<PageBuf>,
    pub ready_at: SimTime,
    pub from_flash: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtlStats {
    pub translations: u64,
    /// Pages handed to the FTL by writers.
    pub host_page_writes: u64,
    /// Pages programmed on behalf of writers, including RMW rewrites.
    pub host_programs: u64,
    pub full_writes: u64,
    pub partial_remaps: u64,
    pub rmw_writes: u64,
    pub rmw_reads: u64,
    pub gc_invocations: u64,
    pub gc_episodes: u64,
    pub gc_programs: u64,
    pub gc_reads: u64,
    pub erases: u64,
    pub trims: u64,
}

/// Physical page slots by state; `mapped + free + dead == total`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PageAccounting {
    pub mapped: u64,
    pub valid_bits: u64,
    pub free: u64,
    pub dead: u64,
    pub total: u64,
}

pub struct Ftl {
    cfg: FtlConfig,
    geometry: FlashGeometry,
    slots: u32,
    ppb: u32,
    logical: u64,
    exception_cap: usize,
    trigger_blocks: usize,
    stop_blocks: usize,
    map: Vec<Option<Mapping>>,
    base_owner: Vec<u32>,
    exc_owner: HashMap<u64, u32>,
    blocks: Vec<BlockMetadata>,
    free: FreePool,
    active: [Option<u32>; 3],
    stats: FtlStats,
}

const NO_OWNER: u32 = u32::MAX;
const OPEN_STREAMS: usize = 3;

fn stream_idx(s: Stream) -> usize {
    match s {
        Stream::Host => 0,
        Stream::Partial => 1,
        Stream::Gc => 2,
    }
}

impl Ftl {
    pub fn new(cfg: FtlConfig, geometry: &FlashGeometry) -> Result<Self, FtlError> {
        let bad = cfg.validate();
        if !bad.is_empty() {
            return Err(FtlError::Config(bad.join("; ")));
        }
        let slots = geometry.total_planes();
        let ppb = geometry.pages_per_block;
        let sb_count = geometry.blocks_per_plane as usize;
        let raw_superpages = sb_count as u64 * ppb as u64;
        let logical = (raw_superpages as f64 * (1.0 - cfg.op_ratio)).floor() as u64;
        let op_blocks = sb_count as f64 - logical as f64 / ppb as f64;
        // GC thresholds are clamped into the over-provisioned space so that
        // low OP ratios still leave GC something to reclaim. The trigger never
        // drops below three blocks: a victim's pages may need a fresh block on
        // both the GC and partial streams before the victim is erased.
        let trigger = ((cfg.gc_threshold * sb_count as f64).ceil())
            .min((op_blocks / 4.0).floor())
            .max(3.0) as usize;
        let stop = ((cfg.gc_stop_threshold * sb_count as f64).ceil())
            .min((op_blocks / 2.0).floor())
            .max(trigger as f64 + 1.0) as usize;
        let needed = logical.div_ceil(ppb as u64) as usize + trigger + OPEN_STREAMS;
        if needed > sb_count || logical == 0 {
            return Err(FtlError::Config(format!(
                "op_ratio {} leaves too little spare space: {} super-blocks needed, {} present",
                cfg.op_ratio, needed, sb_count
            )));
        }
        let exception_cap = match (cfg.exception_cap, cfg.mapping) {
            (Some(c), _) => c as usize,
            (None, MappingMode::SuperPage) => (slots as usize / 2).max(1),
            (None, MappingMode::PageLevel) => slots as usize,
        };
        let mut free = FreePool::default();
        for id in 0..sb_count as u32 {
            free.insert(0, id);
        }
        Ok(Ftl {
            cfg,
            geometry: geometry.clone(),
            slots,
            ppb,
            logical,
            exception_cap,
            trigger_blocks: trigger,
            stop_blocks: stop,
            map: vec![None; logical as usize],
            base_owner: vec![NO_OWNER; raw_superpages as usize],
            exc_owner: HashMap::new(),
            blocks: (0..sb_count).map(|_| BlockMetadata::new(slots, ppb)).collect(),
            free,
            active: [None; 3],
            stats: FtlStats::default(),
        })
    }

    pub fn config(&self) -> &FtlConfig {
        &self.cfg
    }

    pub fn slots(&self) -> u32 {
        self.slots
    }

    pub fn logical_superpages(&self) -> u64 {
        self.logical
    }

    pub fn super_blocks(&self) -> u32 {
        self.blocks.len() as u32
    }

    pub fn stats(&self) -> FtlStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = FtlStats::default();
    }

    pub fn free_blocks(&self) -> usize {
        self.free.len()
    }

    /// (trigger, stop) thresholds in super-blocks.
    pub fn gc_thresholds(&self) -> (usize, usize) {
        (self.trigger_blocks, self.stop_blocks)
    }

    pub fn block_meta(&self, id: u32) -> &BlockMetadata {
        &self.blocks[id as usize]
    }

    pub fn erase_counts(&self) -> Vec<u32> {
        self.blocks.iter().map(|b| b.erase_count).collect()
    }

    /// Flash pages programmed per page handed in by writers.
    pub fn write_amplification(&self) -> f64 {
        if self.stats.host_page_writes == 0 {
            return 0.0;
        }
        (self.stats.host_programs + self.stats.gc_programs) as f64
            / self.stats.host_page_writes as f64
    }

    fn check_range(&self, slpn: u64) -> Result<(), FtlError> {
        if slpn < self.logical {
            Ok(())
        } else {
            Err(FtlError::OutOfRange(slpn, self.logical))
        }
    }

    fn addr(&self, slot: u32, block: u32, page: u32) -> FlashAddress {
        self.geometry.slot_address(slot, block, page)
    }

    fn bit(&self, slot: u32, page: u32) -> usize {
        (page * self.slots + slot) as usize
    }

    pub fn translate_read(&self, slpn: u64) -> Result<Translation, FtlError> {
        self.check_range(slpn)?;
        Ok(match &self.map[slpn as usize] {
            None => Translation::Unmapped,
            Some(m) => Translation::Mapped {
                sppn: m.base,
                exceptions: m
                    .exceptions
                    .iter()
                    .map(|&(s, pp)| (s, pp / self.ppb, pp % self.ppb))
                    .collect(),
            },
        })
    }

    /// Current (block, page) of one slot, if mapped.
    fn slot_location(&self, slpn: u64, slot: u32) -> Option<(u32, u32)> {
        let m = self.map[slpn as usize].as_ref()?;
        if let Some(pp) = m.exception(slot) {
            return Some((pp / self.ppb, pp % self.ppb));
        }
        m.base
            .map(|sppn| ((sppn / self.ppb as u64) as u32, (sppn % self.ppb as u64) as u32))
    }

    /// Physical address currently holding `slot` of `slpn`.
    pub fn resolve(&self, slpn: u64, slot: u32) -> Option<FlashAddress> {
        if slpn >= self.logical {
            return None;
        }
        self.slot_location(slpn, slot)
            .map(|(b, p)| self.addr(slot, b, p))
    }

    pub fn is_mapped(&self, slpn: u64) -> bool {
        slpn < self.logical && self.map[slpn as usize].is_some()
    }

    /// Reads the requested slots from flash; unmapped slots come back as
    /// zero-fill without touching flash.
    pub fn read_slots(
        &mut self,
        flash: &mut FlashBackend,
        slpn: u64,
        slots: &SlotMask,
        at: SimTime,
    ) -> Result<Vec<SlotRead>, FtlError> {
        self.check_range(slpn)?;
        self.stats.translations += 1;
        let mut out = Vec::with_capacity(slots.count() as usize);
        for slot in slots.ones() {
            match self.resolve(slpn, slot) {
                Some(addr) => {
                    let c = flash.read(addr, at)?;
                    out.push(SlotRead {
                        slot,
                        data: c.data,
                        ready_at: c.txn.done_at,
                        from_flash: true,
                    });
                }
                None => out.push(SlotRead {
                    slot,
                    data: None,
                    ready_at: at,
                    from_flash: false,
                }),
            }
        }
        Ok(out)
    }

    fn invalidate_location(&mut self, slpn: u64, slot: u32, now: SimTime) {
        let Some((b, p)) = self.slot_location(slpn, slot) else {
            return;
        };
        let bit = self.bit(slot, p);
        let meta = &mut self.blocks[b as usize];
        meta.clear_valid(bit);
        meta.last_modified = now;
        let page_id = self.geometry.page_index(&self.addr(slot, b, p));
        self.exc_owner.remove(&page_id);
    }

    fn drop_base(&mut self, slpn: u64) {
        if let Some(sppn) = self.map[slpn as usize].as_ref().and_then(|m| m.base) {
            debug_assert_eq!(self.base_owner[sppn as usize], slpn as u32);
            self.base_owner[sppn as usize] = NO_OWNER;
        }
    }

    /// Removes the mapping of `slpn` (TRIM). No-op when unmapped.
    pub fn invalidate(&mut self, slpn: u64, now: SimTime) -> Result<(), FtlError> {
        self.check_range(slpn)?;
        if self.map[slpn as usize].is_none() {
            return Ok(());
        }
        self.stats.trims += 1;
        for slot in 0..self.slots {
            self.invalidate_location(slpn, slot, now);
        }
        self.drop_base(slpn);
        self.map[slpn as usize] = None;
        Ok(())
    }

    fn open_block(&mut self, stream: Stream) -> Result<u32, FtlError> {
        let id = self.free.pop_least_worn().ok_or(FtlError::DeviceFull)?;
        let meta = &mut self.blocks[id as usize];
        debug_assert_eq!(meta.state, BlockState::Free);
        meta.state = BlockState::Open(stream);
        meta.next_page = 0;
        if stream == Stream::Partial {
            meta.slot_cursor = vec![0; self.slots as usize];
        }
        self.active[stream_idx(stream)] = Some(id);
        Ok(id)
    }

    fn close_block(&mut self, id: u32) {
        self.blocks[id as usize].state = BlockState::Closed;
        for a in self.active.iter_mut() {
            if *a == Some(id) {
                *a = None;
            }
        }
    }

    /// Returns the least-worn free super-block and removes it from the pool.
    pub fn allocate_free_block(&mut self) -> Result<u32, FtlError> {
        self.free.pop_least_worn().ok_or(FtlError::DeviceFull)
    }

    fn alloc_aligned(&mut self, stream: Stream) -> Result<(u32, u32), FtlError> {
        let id = match self.active[stream_idx(stream)] {
            Some(id) if self.blocks[id as usize].next_page < self.ppb => id,
            Some(id) => {
                self.close_block(id);
                self.open_block(stream)?
            }
            None => self.open_block(stream)?,
        };
        let meta = &mut self.blocks[id as usize];
        let page = meta.next_page;
        meta.next_page += 1;
        Ok((id, page))
    }

    /// Whether the open partial block still has a page in `slot`.
    fn slot_room(&self, slot: u32) -> bool {
        self.active[stream_idx(Stream::Partial)]
            .is_none_or(|id| self.blocks[id as usize].slot_cursor[slot as usize] < self.ppb)
    }

    fn alloc_slot(&mut self, slot: u32) -> Result<(u32, u32), FtlError> {
        let id = match self.active[stream_idx(Stream::Partial)] {
            Some(id) if self.blocks[id as usize].slot_cursor[slot as usize] < self.ppb => id,
            Some(id) => {
                // remaining pages of other slots in this block are skipped
                self.close_block(id);
                self.open_block(Stream::Partial)?
            }
            None => self.open_block(Stream::Partial)?,
        };
        let meta = &mut self.blocks[id as usize];
        let page = meta.slot_cursor[slot as usize];
        meta.slot_cursor[slot as usize] += 1;
        Ok((id, page))
    }

    /// Writes a whole super-page. `data` holds one optional payload per slot.
    pub fn write(
        &mut self,
        flash: &mut FlashBackend,
        slpn: u64,
        data: Vec<Option<PageBuf>>,
        at: SimTime,
    ) -> Result<WriteReport, FtlError> {
        self.check_range(slpn)?;
        let gc = self.maybe_gc(flash, at)?;
        let start = gc.map_or(at, |g| at + g.stall_time);
        self.stats.host_page_writes += self.slots as u64;
        self.stats.full_writes += 1;
        self.stats.translations += 1;
        let (sppn, done_at) = self.program_full(flash, slpn, data, Stream::Host, start, &[])?;
        self.stats.host_programs += self.slots as u64;
        Ok(WriteReport {
            sppn: Some(sppn),
            programs: self.slots as u64,
            reads: 0,
            done_at,
            gc,
        })
    }

    /// Programs every slot of `slpn` at a fresh aligned super-page and
    /// installs it as the flat mapping. `ready` gives per-slot earliest
    /// program times (defaults to `at`).
    fn program_full(
        &mut self,
        flash: &mut FlashBackend,
        slpn: u64,
        data: Vec<Option<PageBuf>>,
        stream: Stream,
        at: SimTime,
        ready: &[SimTime],
    ) -> Result<(u64, SimTime), FtlError> {
        debug_assert_eq!(data.len(), self.slots as usize);
        let (b, p) = self.alloc_aligned(stream)?;
        let mut done = at;
        for (slot, payload) in data.into_iter().enumerate() {
            let slot = slot as u32;
            let t = ready.get(slot as usize).copied().unwrap_or(at).max(at);
            let c = flash.program(self.addr(slot, b, p), payload, t)?;
            done = done.max(c.txn.done_at);
        }
        for slot in 0..self.slots {
            self.invalidate_location(slpn, slot, at);
        }
        self.drop_base(slpn);
        let sppn = b as u64 * self.ppb as u64 + p as u64;
        for slot in 0..self.slots {
            let bit = self.bit(slot, p);
            self.blocks[b as usize].set_valid(bit);
        }
        self.blocks[b as usize].last_modified = at;
        self.base_owner[sppn as usize] = slpn as u32;
        self.map[slpn as usize] = Some(Mapping {
            base: Some(sppn),
            exceptions: SmallVec::new(),
        });
        Ok((sppn, done))
    }

    /// Updates the `dirty` slots of `slpn`. `data` carries one entry per slot;
    /// entries for clean slots are used when a read-modify-write is needed
    /// and `present` marks them as already known (so no flash read).
    pub fn update(
        &mut self,
        flash: &mut FlashBackend,
        slpn: u64,
        dirty: &SlotMask,
        present: &SlotMask,
        data: Vec<Option<PageBuf>>,
        at: SimTime,
    ) -> Result<RemapPlan, FtlError> {
        if dirty.is_full() {
            let w = self.write(flash, slpn, data, at)?;
            let sppn = w.sppn.unwrap_or(0);
            let (b, p) = ((sppn / self.ppb as u64) as u32, (sppn % self.ppb as u64) as u32);
            return Ok(RemapPlan {
                remapped: (0..self.slots).map(|s| (s, self.addr(s, b, p))).collect(),
                fallback: false,
                reads: 0,
                programs: w.programs,
                done_at: w.done_at,
                gc: w.gc,
            });
        }
        if self.cfg.exception_path {
            self.partial_write_remap(flash, slpn, dirty, present, data, at)
        } else {
            self.read_modify_write(flash, slpn, dirty, present, data, at)
        }
    }

    /// Remaps only the dirty slots to fresh pages in their own planes.
    /// Falls back to a full read-modify-write if the exception list would
    /// exceed its cap.
    pub fn partial_write_remap(
        &mut self,
        flash: &mut FlashBackend,
        slpn: u64,
        dirty: &SlotMask,
        present: &SlotMask,
        mut data: Vec<Option<PageBuf>>,
        at: SimTime,
    ) -> Result<RemapPlan, FtlError> {
        self.check_range(slpn)?;
        debug_assert!(dirty.is_subset_of(present));
        let (base, mut exc_slots): (Option<u64>, Vec<u32>) = match &self.map[slpn as usize] {
            Some(m) => (m.base, m.exceptions.iter().map(|(s, _)| *s).collect()),
            None => (None, Vec::new()),
        };
        // with no base every written slot lives in the exception list
        let _ = base;
        for s in dirty.ones() {
            if !exc_slots.contains(&s) {
                exc_slots.push(s);
            }
        }
        if exc_slots.len() > self.exception_cap {
            let mut plan = self.read_modify_write(flash, slpn, dirty, present, data, at)?;
            plan.fallback = true;
            return Ok(plan);
        }
        let gc = self.maybe_gc(flash, at)?;
        let start = gc.map_or(at, |g| at + g.stall_time);
        self.stats.partial_remaps += 1;
        self.stats.translations += 1;
        let mut remapped = Vec::new();
        let mut done = start;
        let mut programs = 0;
        for slot in dirty.ones() {
            let (b, p) = self.alloc_slot(slot)?;
            let addr = self.addr(slot, b, p);
            let c = flash.program(addr, data[slot as usize].take(), start)?;
            done = done.max(c.txn.done_at);
            programs += 1;
            self.invalidate_location(slpn, slot, at);
            let bit = self.bit(slot, p);
            let meta = &mut self.blocks[b as usize];
            meta.set_valid(bit);
            meta.last_modified = at;
            self.exc_owner
                .insert(self.geometry.page_index(&addr), slpn as u32);
            let m = self.map[slpn as usize].get_or_insert_with(Mapping::default);
            let pp = b * self.ppb + p;
            match m.exceptions.iter_mut().find(|(s, _)| *s == slot) {
                Some(e) => e.1 = pp,
                None => m.exceptions.push((slot, pp)),
            }
            remapped.push((slot, addr));
        }
        self.stats.host_page_writes += programs;
        self.stats.host_programs += programs;
        Ok(RemapPlan {
            remapped,
            fallback: false,
            reads: 0,
            programs,
            done_at: done,
            gc,
        })
    }

    /// Reads the clean, not-present slots and rewrites the super-page whole.
    pub fn read_modify_write(
        &mut self,
        flash: &mut FlashBackend,
        slpn: u64,
        dirty: &SlotMask,
        present: &SlotMask,
        mut data: Vec<Option<PageBuf>>,
        at: SimTime,
    ) -> Result<RemapPlan, FtlError> {
        self.check_range(slpn)?;
        let mut missing = SlotMask::empty(self.slots);
        for s in 0..self.slots {
            if !present.get(s) {
                missing.set(s);
            }
        }
        let reads = self.read_slots(flash, slpn, &missing, at)?;
        let mut ready = vec![at; self.slots as usize];
        let mut n_reads = 0;
        for r in reads {
            if r.from_flash {
                n_reads += 1;
            }
            ready[r.slot as usize] = r.ready_at;
            data[r.slot as usize] = r.data;
        }
        let gc = self.maybe_gc(flash, at)?;
        let start = gc.map_or(at, |g| at + g.stall_time);
        // programs wait for every read of the super-page
        let all_read = ready.iter().copied().max().unwrap_or(at).max(start);
        let (sppn, done) = self.program_full(flash, slpn, data, Stream::Host, all_read, &[])?;
        self.stats.rmw_writes += 1;
        self.stats.rmw_reads += n_reads;
        self.stats.host_page_writes += dirty.count() as u64;
        self.stats.host_programs += self.slots as u64;
        self.stats.translations += 1;
        let (b, p) = ((sppn / self.ppb as u64) as u32, (sppn % self.ppb as u64) as u32);
        Ok(RemapPlan {
            remapped: dirty.ones().map(|s| (s, self.addr(s, b, p))).collect(),
            fallback: false,
            reads: n_reads,
            programs: self.slots as u64,
            done_at: done,
            gc,
        })
    }

    fn candidates(&self) -> Vec<VictimCandidate> {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.state == BlockState::Closed)
            .map(|(id, b)| VictimCandidate {
                id: id as u32,
                valid_count: b.valid_count,
                erase_count: b.erase_count,
                last_modified: b.last_modified,
            })
            .collect()
    }

    pub fn select_victim_greedy(&self) -> Option<u32> {
        greedy_victim(&self.candidates())
    }

    pub fn select_victim_costbenefit(&self, now: SimTime) -> Option<u32> {
        cost_benefit_victim(&self.candidates(), self.slots * self.ppb, now)
    }

    /// A closed block lagging the most-worn block by more than the
    /// wear-leveling threshold. Moving it yields no space, so it is only
    /// considered while the pool sits above the GC trigger.
    fn wear_victim(&self) -> Option<u32> {
        let limit = self.cfg.wear_leveling_threshold?;
        if self.free.len() <= self.trigger_blocks.max(2) {
            return None;
        }
        let max = self.blocks.iter().map(|b| b.erase_count).max().unwrap_or(0);
        self.candidates()
            .into_iter()
            .filter(|c| max - c.erase_count > limit)
            .min_by_key(|c| (c.erase_count, c.id))
            .map(|c| c.id)
    }

    fn select_victim(&self, now: SimTime) -> Option<u32> {
        match self.cfg.gc_policy {
            GcPolicy::Greedy => self.select_victim_greedy(),
            GcPolicy::Costbenefit => self.select_victim_costbenefit(now),
        }
    }

    fn capacity_pages(&self) -> u32 {
        self.slots * self.ppb
    }

    /// Pages still programmable in free and open blocks.
    fn unwritten_pages(&self) -> u64 {
        let cap = self.capacity_pages() as u64;
        let open: u64 = self
            .active
            .iter()
            .flatten()
            .map(|&id| cap - self.blocks[id as usize].programmed(self.slots))
            .sum();
        self.free.len() as u64 * cap + open
    }

    fn maybe_gc(&mut self, flash: &mut FlashBackend, at: SimTime) -> Result<Option<GcReport>, FtlError> {
        let floor = match self.cfg.gc_mode {
            GcMode::Inline => self.trigger_blocks,
            GcMode::Background => 3,
        };
        if self.free.len() >= floor {
            return Ok(None);
        }
        let r = self.garbage_collect(flash, at)?;
        if self.free.is_empty() {
            return Err(FtlError::DeviceFull);
        }
        Ok(Some(r))
    }

    /// Collects victims until the free pool reaches the stop threshold or no
    /// victim would yield space.
    pub fn garbage_collect(&mut self, flash: &mut FlashBackend, now: SimTime) -> Result<GcReport, FtlError> {
        self.stats.gc_episodes += 1;
        let mut report = GcReport::default();
        while self.free.len() < self.stop_blocks {
            let before = self.unwritten_pages();
            match self.collect_one(flash, now)? {
                Some(r) => report.absorb(&r),
                None => break,
            }
            // a victim whose pages all landed elsewhere gained nothing
            if self.unwritten_pages() <= before {
                break;
            }
        }
        for _ in 0..self.stop_blocks {
            match self.level_wear(flash, now)? {
                Some(r) => report.absorb(&r),
                None => break,
            }
        }
        Ok(report)
    }

    /// Reclaims a single victim if the pool is below the stop threshold.
    pub fn idle_collect(&mut self, flash: &mut FlashBackend, now: SimTime) -> Result<Option<GcReport>, FtlError> {
        if self.free.len() >= self.stop_blocks {
            return self.level_wear(flash, now);
        }
        self.collect_one(flash, now)
    }

    /// Moves one cold block so its erase count catches up, even when it is
    /// fully valid.
    fn level_wear(&mut self, flash: &mut FlashBackend, now: SimTime) -> Result<Option<GcReport>, FtlError> {
        match self.wear_victim() {
            Some(cold) => Ok(Some(self.collect_victim(flash, cold, now)?)),
            None => Ok(None),
        }
    }

    fn collect_one(&mut self, flash: &mut FlashBackend, now: SimTime) -> Result<Option<GcReport>, FtlError> {
        let Some(victim) = self.select_victim(now) else {
            return Ok(None);
        };
        if self.blocks[victim as usize].valid_count >= self.capacity_pages() {
            return Ok(None);
        }
        Ok(Some(self.collect_victim(flash, victim, now)?))
    }

    fn owner_of(&self, block: u32, bit: usize) -> u32 {
        let slot = bit as u32 % self.slots;
        let page = bit as u32 / self.slots;
        let page_id = self.geometry.page_index(&self.addr(slot, block, page));
        if let Some(&o) = self.exc_owner.get(&page_id) {
            return o;
        }
        let o = self.base_owner[block as usize * self.ppb as usize + page as usize];
        debug_assert_ne!(o, NO_OWNER, "valid page without owner");
        o
    }

    fn collect_victim(&mut self, flash: &mut FlashBackend, victim: u32, now: SimTime) -> Result<GcReport, FtlError> {
        // Owners with their base row here are rewritten whole, which also
        // folds their exceptions back in. Pages held only as exceptions move
        // one for one, so a block packed by partial writes costs at most its
        // own size to reclaim.
        let mut owners = Vec::new();
        let mut seen = HashSet::new();
        let mut stray = Vec::new();
        for bit in self.blocks[victim as usize].valid_bits() {
            let (slot, page) = (bit as u32 % self.slots, bit as u32 / self.slots);
            let page_id = self.geometry.page_index(&self.addr(slot, victim, page));
            match self.exc_owner.get(&page_id) {
                Some(&o) => stray.push((o, slot)),
                None => {
                    let o = self.owner_of(victim, bit);
                    if seen.insert(o) {
                        owners.push(o as u64);
                    }
                }
            }
        }
        let mut report = GcReport {
            victims: 1,
            ..GcReport::default()
        };
        let mut done = now;
        for slpn in owners {
            done = done.max(self.migrate_whole(flash, slpn, now, &mut report)?);
        }
        for (o, slot) in stray {
            if seen.contains(&o) {
                continue;
            }
            // Retiring the partial block here could leave a copy of the
            // victim behind, so a full column rewrites the owner instead.
            if self.slot_room(slot) {
                done = done.max(self.relocate_exception(flash, o as u64, slot, now)?);
                report.reads += 1;
                report.migrated_pages += 1;
            } else {
                seen.insert(o);
                done = done.max(self.migrate_whole(flash, o as u64, now, &mut report)?);
            }
        }
        debug_assert_eq!(self.blocks[victim as usize].valid_count, 0);
        for slot in 0..self.slots {
            let c = flash.erase(self.addr(slot, victim, 0), done)?;
            report.stall_time = report.stall_time.max(c.txn.done_at - now);
        }
        report.stall_time = report.stall_time.max(done - now);
        let meta = &mut self.blocks[victim as usize];
        meta.reset_after_erase();
        meta.last_modified = now;
        let ec = meta.erase_count;
        self.free.insert(ec, victim);
        report.erased_blocks = 1;
        self.stats.gc_invocations += 1;
        self.stats.gc_programs += report.migrated_pages;
        self.stats.gc_reads += report.reads;
        self.stats.erases += 1;
        Ok(report)
    }

    /// Rewrites every slot of `slpn` as one aligned super-page on the GC
    /// stream.
    fn migrate_whole(
        &mut self,
        flash: &mut FlashBackend,
        slpn: u64,
        now: SimTime,
        report: &mut GcReport,
    ) -> Result<SimTime, FtlError> {
        let all = SlotMask::full(self.slots);
        let reads = self.read_slots(flash, slpn, &all, now)?;
        self.stats.translations -= 1;
        let mut ready = vec![now; self.slots as usize];
        let mut data = vec![None; self.slots as usize];
        for r in reads {
            if r.from_flash {
                report.reads += 1;
            }
            ready[r.slot as usize] = r.ready_at;
            data[r.slot as usize] = r.data;
        }
        let (_, d) = self.program_full(flash, slpn, data, Stream::Gc, now, &ready)?;
        report.migrated_superpages += 1;
        report.migrated_pages += self.slots as u64;
        Ok(d)
    }

    /// Moves one exception page of `slpn` to a fresh page in its plane.
    fn relocate_exception(
        &mut self,
        flash: &mut FlashBackend,
        slpn: u64,
        slot: u32,
        now: SimTime,
    ) -> Result<SimTime, FtlError> {
        let from = self.resolve(slpn, slot).expect("exception page is mapped");
        let r = flash.read(from, now)?;
        let (b, p) = self.alloc_slot(slot)?;
        let addr = self.addr(slot, b, p);
        let c = flash.program(addr, r.data, r.txn.done_at)?;
        self.invalidate_location(slpn, slot, now);
        let bit = self.bit(slot, p);
        let meta = &mut self.blocks[b as usize];
        meta.set_valid(bit);
        meta.last_modified = now;
        self.exc_owner.insert(self.geometry.page_index(&addr), slpn as u32);
        let pp = b * self.ppb + p;
        let m = self.map[slpn as usize].as_mut().expect("mapped");
        if let Some(e) = m.exceptions.iter_mut().find(|(s, _)| *s == slot) {
            e.1 = pp;
        }
        Ok(c.txn.done_at)
    }

    /// Installs a flat mapping for every logical super-page in order, as a
    /// sequential fill of an empty device would. Flash timing should be off.
    pub fn sequential_fill(&mut self, flash: &mut FlashBackend, at: SimTime) -> Result<(), FtlError> {
        for slpn in 0..self.logical {
            self.write(flash, slpn, vec![None; self.slots as usize], at)?;
        }
        Ok(())
    }

    /// Walks the mapping table and block states to classify every physical
    /// page slot.
    pub fn page_accounting(&self) -> PageAccounting {
        let mut mapped = 0u64;
        for (slpn, m) in self.map.iter().enumerate() {
            if m.is_some() {
                mapped += (0..self.slots)
                    .filter(|s| self.slot_location(slpn as u64, *s).is_some())
                    .count() as u64;
            }
        }
        let cap = self.capacity_pages() as u64;
        let (mut free, mut dead, mut valid_bits) = (0u64, 0u64, 0u64);
        for b in &self.blocks {
            valid_bits += b.popcount() as u64;
            let programmed = b.programmed(self.slots);
            match b.state {
                BlockState::Free => free += cap,
                BlockState::Open(_) => {
                    free += cap - programmed;
                    dead += programmed - b.valid_count as u64;
                }
                BlockState::Closed => dead += cap - b.valid_count as u64,
            }
        }
        PageAccounting {
            mapped,
            valid_bits,
            free,
            dead,
            total: cap * self.blocks.len() as u64,
        }
    }
}
