//! Internal cache layer: super-page sized lines held in controller DRAM.
//!
//! Reads fill only the slots they miss; writes are staged into lines and
//! acknowledged once the DRAM write finishes (write-back), after any dirty
//! victim they displaced has been written to flash. A sequential-stream
//! detector drives readahead of whole super-pages, which by construction
//! span every channel and die.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::flash::{FlashAddress, PageBuf};
use crate::ftl::FtlError;
use crate::mask::SlotMask;
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Associativity {
    FullyAssociative,
    SetAssociative,
    DirectMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Replacement {
    Lru,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub enabled: bool,
    pub mode: Associativity,
    /// Total cache lines; each line holds one super-page.
    pub lines: u32,
    /// Ways per set in set-associative mode.
    pub ways: u32,
    pub replacement: Replacement,
    pub readahead: bool,
    pub readahead_threshold: u32,
    /// Super-pages loaded per readahead; defaults to the channel count.
    pub readahead_degree: Option<u32>,
    /// Sequential streams tracked by the detector.
    pub streams: u32,
    pub write_through: bool,
    /// Seed for random replacement.
    pub seed: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            enabled: true,
            mode: Associativity::FullyAssociative,
            lines: 64,
            ways: 8,
            replacement: Replacement::Lru,
            readahead: true,
            readahead_threshold: 3,
            readahead_degree: None,
            streams: 1,
            write_through: false,
            seed: 0,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.lines == 0 {
            bad.push("icl.lines must be at least 1".into());
        }
        if self.mode == Associativity::SetAssociative
            && (self.ways == 0 || !self.lines.is_multiple_of(self.ways.max(1)))
        {
            bad.push(format!(
                "icl.ways {} must be positive and divide icl.lines {}",
                self.ways, self.lines
            ));
        }
        if self.streams == 0 || self.streams > 64 {
            bad.push(format!("icl.streams {} must be in 1..=64", self.streams));
        }
        if self.readahead_degree == Some(0) {
            bad.push("icl.readahead_degree must be positive".into());
        }
        bad
    }

    /// (sets, ways) implied by the associativity mode.
    pub fn shape(&self) -> (u32, u32) {
        match self.mode {
            Associativity::FullyAssociative => (1, self.lines),
            Associativity::SetAssociative => (self.lines / self.ways, self.ways),
            Associativity::DirectMap => (self.lines, 1),
        }
    }
}

#[derive(Clone, Debug)]
struct Line {
    tag: Option<u64>,
    valid: SlotMask,
    dirty: SlotMask,
    stamp: u64,
    ready_at: SimTime,
    data: Vec<Option<PageBuf>>,
}

impl Line {
    fn empty(slots: u32) -> Self {
        Line {
            tag: None,
            valid: SlotMask::empty(slots),
            dirty: SlotMask::empty(slots),
            stamp: 0,
            ready_at: SimTime::ZERO,
            data: vec![None; slots as usize],
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct StreamRecord {
    next_lpn: u64,
    counter: u32,
    stamp: u64,
    live: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrefetchAction {
    pub slpn: u64,
    pub addresses: Vec<FlashAddress>,
    pub done_at: SimTime,
}

#[derive(Debug)]
pub struct IclRead {
    /// One entry per requested slot, in slot order.
    pub data: Vec<Option<PageBuf>>,
    pub ready_at: SimTime,
    pub dram_addr: u64,
    pub bytes: u64,
    /// Every requested slot was already cached.
    pub hit: bool,
    pub flash_reads: u32,
}

#[derive(Clone, Copy, Debug)]
pub struct IclWrite {
    pub ack_at: SimTime,
    pub dram_addr: u64,
    pub evictions: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclStats {
    pub read_requests: u64,
    pub read_hits: u64,
    pub read_slot_hits: u64,
    pub read_slot_misses: u64,
    pub write_requests: u64,
    pub evictions: u64,
    pub clean_drops: u64,
    pub prefetch_lines: u64,
    pub prefetch_reads: u64,
    pub flushed_lines: u64,
}

impl IclStats {
    pub fn hit_ratio(&self) -> f64 {
        if self.read_requests == 0 {
            0.0
        } else {
            self.read_hits as f64 / self.read_requests as f64
        }
    }
}

pub struct Icl {
    cfg: CacheConfig,
    slots: u32,
    page_bytes: u64,
    sets: u32,
    ways: u32,
    degree: u32,
    lines: Vec<Line>,
    index: HashMap<u64, usize>,
    tick: u64,
    rng: ChaCha8Rng,
    streams: Vec<StreamRecord>,
    staging_base: u64,
    staging_end: u64,
    staging_cursor: u64,
    stats: IclStats,
    prefetch_log: Vec<PrefetchAction>,
}

impl Icl {
    /// Builds the cache for super-pages of `slots` pages; fails if the lines
    /// do not fit in `dram_bytes`.
    pub fn new(
        cfg: CacheConfig,
        slots: u32,
        page_bytes: u32,
        channels: u32,
        dram_bytes: u64,
    ) -> Result<Self, String> {
        let bad = cfg.validate();
        if !bad.is_empty() {
            return Err(bad.join("; "));
        }
        let (sets, ways) = cfg.shape();
        let line_bytes = slots as u64 * page_bytes as u64;
        let cache_bytes = if cfg.enabled {
            cfg.lines as u64 * line_bytes
        } else {
            0
        };
        if cache_bytes + line_bytes > dram_bytes {
            return Err(format!(
                "icl: {} lines of {} bytes plus a staging line exceed DRAM size {}",
                cfg.lines, line_bytes, dram_bytes
            ));
        }
        let n_lines = if cfg.enabled { cfg.lines as usize } else { 0 };
        Ok(Icl {
            degree: cfg.readahead_degree.unwrap_or(channels),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            streams: vec![StreamRecord::default(); cfg.streams as usize],
            lines: vec![Line::empty(slots); n_lines],
            index: HashMap::new(),
            tick: 0,
            slots,
            page_bytes: page_bytes as u64,
            sets,
            ways,
            staging_base: cache_bytes,
            staging_end: dram_bytes,
            staging_cursor: cache_bytes,
            stats: IclStats::default(),
            prefetch_log: Vec::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn stats(&self) -> IclStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = IclStats::default();
    }

    pub fn enabled(&self) -> bool {
        self.cfg.enabled
    }

    pub fn readahead_degree(&self) -> u32 {
        self.degree
    }

    /// Readahead actions issued since the last call.
    pub fn take_prefetch_log(&mut self) -> Vec<PrefetchAction> {
        std::mem::take(&mut self.prefetch_log)
    }

    pub fn dirty_lines(&self) -> usize {
        self.lines.iter().filter(|l| !l.dirty.is_empty()).count()
    }

    pub fn is_cached(&self, slpn: u64) -> bool {
        self.index.contains_key(&slpn)
    }

    /// (valid, dirty) masks of the line holding `slpn`.
    pub fn line_state(&self, slpn: u64) -> Option<(SlotMask, SlotMask)> {
        self.index
            .get(&slpn)
            .map(|&i| (self.lines[i].valid.clone(), self.lines[i].dirty.clone()))
    }

    fn line_addr(&self, idx: usize) -> u64 {
        idx as u64 * self.slots as u64 * self.page_bytes
    }

    /// DRAM buffer for data that does not go through a cache line.
    pub fn staging_addr(&mut self, len: u64) -> u64 {
        let region = self.staging_end - self.staging_base;
        let len = len.min(region);
        if self.staging_cursor + len > self.staging_end {
            self.staging_cursor = self.staging_base;
        }
        let a = self.staging_cursor;
        self.staging_cursor += len;
        a
    }

    fn clamp_len(&self, addr: u64, len: u64) -> u64 {
        len.min(self.staging_end - addr)
    }

    fn slot_span(&self, mask: &SlotMask) -> (u64, u64) {
        let first = mask.ones().next().unwrap_or(0) as u64;
        let last = mask.ones().last().map_or(0, |s| s as u64 + 1);
        (first * self.page_bytes, last.saturating_sub(first) * self.page_bytes)
    }

    fn next_tick(&mut self) -> u64 {
        self.tick += 1;
        self.tick
    }

    /// Picks a way in the set of `slpn`. Free ways come first; dirty lines are
    /// only eligible when `allow_dirty` is set.
    fn choose_victim(&mut self, slpn: u64, allow_dirty: bool) -> Option<usize> {
        let set = (slpn % self.sets as u64) as usize;
        let range = set * self.ways as usize..(set + 1) * self.ways as usize;
        if let Some(i) = range.clone().find(|&i| self.lines[i].tag.is_none()) {
            return Some(i);
        }
        let eligible: Vec<usize> = range
            .filter(|&i| allow_dirty || self.lines[i].dirty.is_empty())
            .collect();
        if eligible.is_empty() {
            return None;
        }
        match self.cfg.replacement {
            Replacement::Lru => eligible.into_iter().min_by_key(|&i| self.lines[i].stamp),
            Replacement::Random => Some(eligible[self.rng.gen_range(0..eligible.len())]),
        }
    }

    /// Claims a line for `slpn`, writing back a dirty victim. Returns the
    /// line and the times at which its DRAM space is free and the victim's
    /// flash writes are done.
    fn allocate(
        &mut self,
        be: &mut Backend,
        slpn: u64,
        allow_dirty: bool,
        at: SimTime,
    ) -> Result<Option<(usize, SimTime, SimTime)>, FtlError> {
        let Some(idx) = self.choose_victim(slpn, allow_dirty) else {
            return Ok(None);
        };
        let (mut free_at, mut done_at) = (at, at);
        if let Some(old) = self.lines[idx].tag {
            if self.lines[idx].dirty.is_empty() {
                self.stats.clean_drops += 1;
            } else {
                let (f, d) = self.write_back(be, idx, false, at)?;
                free_at = f;
                done_at = d;
            }
            self.index.remove(&old);
        }
        let stamp = self.next_tick();
        let line = &mut self.lines[idx];
        *line = Line::empty(self.slots);
        line.tag = Some(slpn);
        line.stamp = stamp;
        line.ready_at = free_at;
        self.index.insert(slpn, idx);
        Ok(Some((idx, free_at, done_at)))
    }

    /// Writes the dirty slots of a line to the FTL. With `keep` the line stays
    /// cached (clean); otherwise its payloads are moved out.
    fn write_back(
        &mut self,
        be: &mut Backend,
        idx: usize,
        keep: bool,
        at: SimTime,
    ) -> Result<(SimTime, SimTime), FtlError> {
        let td = be.translate_delay();
        let addr = self.line_addr(idx);
        let line = &mut self.lines[idx];
        let slpn = line.tag.expect("write-back of an empty line");
        let dirty = line.dirty.clone();
        let present = line.valid.clone();
        let data: Vec<Option<PageBuf>> = if keep {
            line.data.clone()
        } else {
            std::mem::replace(&mut line.data, vec![None; self.slots as usize])
        };
        let start = at.max(line.ready_at);
        let (off, len) = self.slot_span(&dirty);
        let dram_done = be
            .dram
            .access(addr + off, len, false, start)
            .expect("cache line inside DRAM");
        let plan = be.ftl.update(
            &mut be.flash,
            slpn,
            &dirty,
            &present,
            data,
            dram_done + td,
        )?;
        self.lines[idx].dirty.clear();
        self.stats.evictions += 1;
        Ok((dram_done, plan.done_at))
    }

    /// Serves `slots` of super-page `slpn`.
    pub fn read(
        &mut self,
        be: &mut Backend,
        slpn: u64,
        slots: &SlotMask,
        at: SimTime,
    ) -> Result<IclRead, FtlError> {
        let td = be.translate_delay();
        self.stats.read_requests += 1;
        let (off, bytes) = self.slot_span(slots);
        if !self.cfg.enabled {
            let reads = be
                .ftl
                .read_slots(&mut be.flash, slpn, slots, at + td)?;
            let addr = self.staging_addr(bytes);
            let flash_reads = reads.iter().filter(|r| r.from_flash).count() as u32;
            let mut ready = at + td;
            for r in &reads {
                ready = ready.max(r.ready_at);
            }
            if flash_reads > 0 {
                ready = be
                    .dram
                    .access(addr, self.clamp_len(addr, bytes), true, ready)
                    .expect("staging inside DRAM");
            }
            self.stats.read_slot_misses += slots.count() as u64;
            return Ok(IclRead {
                data: reads.into_iter().map(|r| r.data).collect(),
                ready_at: ready,
                dram_addr: addr,
                bytes,
                hit: false,
                flash_reads,
            });
        }

        let t = at + be.fw.icl_lookup();
        let idx = self.index.get(&slpn).copied();
        let mut miss = slots.clone();
        if let Some(i) = idx {
            for s in slots.ones() {
                if self.lines[i].valid.get(s) {
                    miss.unset(s);
                }
            }
        }
        let hits = slots.count() - miss.count();
        self.stats.read_slot_hits += hits as u64;
        self.stats.read_slot_misses += miss.count() as u64;
        let mut flash_reads = 0;
        let idx = match idx {
            Some(i) => {
                let stamp = self.next_tick();
                self.lines[i].stamp = stamp;
                i
            }
            None => self
                .allocate(be, slpn, true, t)?
                .expect("a dirty-eligible victim always exists")
                .0,
        };
        let ready = if miss.is_empty() {
            self.stats.read_hits += 1;
            t.max(self.lines[idx].ready_at)
        } else {
            let reads = be
                .ftl
                .read_slots(&mut be.flash, slpn, &miss, t + td)?;
            let mut arrive = t + td;
            for r in reads {
                if r.from_flash {
                    flash_reads += 1;
                }
                arrive = arrive.max(r.ready_at);
                self.lines[idx].data[r.slot as usize] = r.data;
            }
            let start = arrive.max(self.lines[idx].ready_at);
            let (moff, mlen) = self.slot_span(&miss);
            let done = be
                .dram
                .access(self.line_addr(idx) + moff, mlen, true, start)
                .expect("cache line inside DRAM");
            let line = &mut self.lines[idx];
            line.valid.union_with(&miss);
            line.ready_at = line.ready_at.max(done);
            done
        };
        let data = slots
            .ones()
            .map(|s| self.lines[idx].data[s as usize].clone())
            .collect();
        let first = slots.ones().next().unwrap_or(0) as u64;
        let start_lpn = slpn * self.slots as u64 + first;
        if self.detect(start_lpn, start_lpn + bytes / self.page_bytes, !miss.is_empty()) {
            self.prefetch(be, slpn, t)?;
        }
        Ok(IclRead {
            data,
            ready_at: ready,
            dram_addr: self.line_addr(idx) + off,
            bytes,
            hit: miss.is_empty(),
            flash_reads,
        })
    }

    /// Updates the stream table and reports whether readahead should run.
    fn detect(&mut self, start: u64, end: u64, missed: bool) -> bool {
        if !self.cfg.readahead {
            return false;
        }
        let tick = self.next_tick();
        let threshold = self.cfg.readahead_threshold;
        if let Some(s) = self
            .streams
            .iter_mut()
            .find(|s| s.live && s.next_lpn == start)
        {
            if missed {
                s.counter += 1;
            }
            s.next_lpn = end;
            s.stamp = tick;
            return s.counter > threshold;
        }
        let slot = self
            .streams
            .iter_mut()
            .min_by_key(|s| (s.live, s.stamp))
            .expect("at least one stream record");
        *slot = StreamRecord {
            next_lpn: end,
            counter: 1,
            stamp: tick,
            live: true,
        };
        1 > threshold
    }

    /// Keeps the next `degree` super-pages after `slpn` cached or in flight.
    fn prefetch(&mut self, be: &mut Backend, slpn: u64, at: SimTime) -> Result<(), FtlError> {
        let td = be.translate_delay();
        let logical = be.ftl.logical_superpages();
        let all = SlotMask::full(self.slots);
        for k in 1..=self.degree as u64 {
            let target = slpn + k;
            if target >= logical {
                break;
            }
            if self.index.contains_key(&target) {
                continue;
            }
            // prefetch never displaces dirty data
            let Some((idx, free_at, _)) = self.allocate(be, target, false, at)? else {
                break;
            };
            let addresses: Vec<FlashAddress> = (0..self.slots)
                .filter_map(|s| be.ftl.resolve(target, s))
                .collect();
            let reads = be
                .ftl
                .read_slots(&mut be.flash, target, &all, at + td)?;
            let mut arrive = at + td;
            for r in reads {
                if r.from_flash {
                    self.stats.prefetch_reads += 1;
                }
                arrive = arrive.max(r.ready_at);
                self.lines[idx].data[r.slot as usize] = r.data;
            }
            let len = self.slots as u64 * self.page_bytes;
            let done = be
                .dram
                .access(self.line_addr(idx), len, true, arrive.max(free_at))
                .expect("cache line inside DRAM");
            let line = &mut self.lines[idx];
            line.valid = all.clone();
            line.ready_at = done;
            self.stats.prefetch_lines += 1;
            self.prefetch_log.push(PrefetchAction {
                slpn: target,
                addresses,
                done_at: done,
            });
        }
        Ok(())
    }

    /// Stages `slots` of `slpn`; `data` holds one entry per slot of the
    /// super-page. `at` is when the data starts arriving in DRAM.
    pub fn write(
        &mut self,
        be: &mut Backend,
        slpn: u64,
        slots: &SlotMask,
        mut data: Vec<Option<PageBuf>>,
        at: SimTime,
    ) -> Result<IclWrite, FtlError> {
        let td = be.translate_delay();
        self.stats.write_requests += 1;
        let (off, bytes) = self.slot_span(slots);
        if !self.cfg.enabled {
            let addr = self.staging_addr(bytes);
            let staged = be
                .dram
                .access(addr, self.clamp_len(addr, bytes), true, at)
                .expect("staging inside DRAM");
            let out = be
                .dram
                .access(addr, self.clamp_len(addr, bytes), false, staged)
                .expect("staging inside DRAM");
            let plan = be.ftl.update(
                &mut be.flash,
                slpn,
                slots,
                slots,
                data,
                out + td,
            )?;
            return Ok(IclWrite {
                ack_at: plan.done_at,
                dram_addr: addr,
                evictions: 0,
            });
        }
        let t = at + be.fw.icl_lookup();
        let mut evictions = 0;
        let (idx, free_at, evict_done) = match self.index.get(&slpn).copied() {
            Some(i) => {
                let stamp = self.next_tick();
                self.lines[i].stamp = stamp;
                (i, t, t)
            }
            None => {
                let before = self.stats.evictions;
                let r = self
                    .allocate(be, slpn, true, t)?
                    .expect("a dirty-eligible victim always exists");
                evictions = (self.stats.evictions - before) as u32;
                r
            }
        };
        let addr = self.line_addr(idx) + off;
        let staged = be
            .dram
            .access(addr, bytes, true, t.max(free_at))
            .expect("cache line inside DRAM");
        let line = &mut self.lines[idx];
        for s in slots.ones() {
            line.data[s as usize] = data[s as usize].take();
        }
        line.valid.union_with(slots);
        line.dirty.union_with(slots);
        let mut ack = staged.max(evict_done);
        if self.cfg.write_through {
            let (_, done) = self.write_back(be, idx, true, staged)?;
            ack = ack.max(done);
        }
        Ok(IclWrite {
            ack_at: ack,
            dram_addr: addr,
            evictions,
        })
    }

    /// Writes back every dirty line; lines stay cached and clean. Returns the
    /// number of lines written and when the last flash write finishes.
    pub fn flush_all(&mut self, be: &mut Backend, at: SimTime) -> Result<(usize, SimTime), FtlError> {
        let mut n = 0;
        let mut done = at;
        for idx in 0..self.lines.len() {
            if self.lines[idx].tag.is_some() && !self.lines[idx].dirty.is_empty() {
                let (_, d) = self.write_back(be, idx, true, at)?;
                done = done.max(d);
                n += 1;
            }
        }
        self.stats.flushed_lines += n as u64;
        Ok((n, done))
    }

    /// Drops a cached super-page without writing it back (after TRIM).
    pub fn discard(&mut self, slpn: u64) {
        if let Some(idx) = self.index.remove(&slpn) {
            self.lines[idx] = Line::empty(self.slots);
        }
    }

    /// Lowest-stamp dirty line, for idle-time write-back.
    pub fn oldest_dirty(&self) -> Option<u64> {
        self.lines
            .iter()
            .filter(|l| !l.dirty.is_empty())
            .min_by_key(|l| l.stamp)
            .and_then(|l| l.tag)
    }

    pub fn line_bytes(&self) -> u64 {
        self.slots as u64 * self.page_bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::{Dram, DramConfig};
    use crate::flash::{mlc_table_timings, FlashBackend, FlashGeometry};
    use crate::ftl::{Ftl, FtlConfig};
    use crate::backend::FirmwareLatency;

    fn backend(channels: u32, ftl_cfg: FtlConfig) -> Backend {
        let g = FlashGeometry {
            channels,
            packages_per_channel: 1,
            dies_per_package: 1,
            planes_per_die: 1,
            blocks_per_plane: 64,
            pages_per_block: 16,
            page_size_bytes: 4096,
        };
        Backend {
            ftl: Ftl::new(ftl_cfg, &g).unwrap(),
            flash: FlashBackend::new(g, mlc_table_timings()),
            dram: Dram::new(DramConfig::ddr3l_1600(64 << 20)),
            fw: FirmwareLatency::default(),
        }
    }

    fn icl(cfg: CacheConfig, channels: u32) -> Icl {
        Icl::new(cfg, channels, 4096, channels, 64 << 20).unwrap()
    }

    fn page(b: u8) -> Option<PageBuf> {
        Some(vec![b; 4096].into_boxed_slice())
    }

    #[test]
    fn write_is_acknowledged_without_flash() {
        let mut be = backend(4, FtlConfig::default());
        let mut c = icl(CacheConfig::default(), 4);
        let all = SlotMask::full(4);
        c.write(&mut be, 0, &all, vec![page(1); 4], SimTime::ZERO).unwrap();
        assert_eq!(be.flash.stats().programs, 0);
        let r = c.read(&mut be, 0, &all, SimTime::from_us(1)).unwrap();
        assert!(r.hit);
        assert_eq!(be.flash.stats().reads, 0);
        assert_eq!(r.data[2].as_deref(), page(1).as_deref());
    }

    #[test]
    fn lru_victim_is_least_recent() {
        let cfg = CacheConfig {
            mode: Associativity::SetAssociative,
            lines: 4,
            ways: 2,
            readahead: false,
            ..CacheConfig::default()
        };
        let mut be = backend(1, FtlConfig::default());
        let mut c = icl(cfg, 1);
        let one = SlotMask::full(1);
        // slpns 0, 2, 4 share set 0
        for s in [0, 2] {
            c.write(&mut be, s, &one, vec![page(s as u8)], SimTime::ZERO).unwrap();
        }
        c.read(&mut be, 0, &one, SimTime::ZERO).unwrap();
        c.write(&mut be, 4, &one, vec![page(4)], SimTime::ZERO).unwrap();
        assert!(c.is_cached(0) && c.is_cached(4) && !c.is_cached(2));
        assert_eq!(c.stats().evictions, 1);
    }

    #[test]
    fn cold_read_fills_one_line_per_superpage() {
        let mut be = backend(4, FtlConfig::default());
        let mut c = icl(
            CacheConfig {
                readahead: false,
                ..CacheConfig::default()
            },
            4,
        );
        for s in 0..3 {
            c.read(&mut be, s, &SlotMask::full(4), SimTime::ZERO).unwrap();
        }
        assert_eq!(c.stats().read_hits, 0);
        assert_eq!(c.index.len(), 3);
    }

    #[test]
    fn eviction_counts_match_partial_write_paths() {
        for (exception, reads, programs) in [(true, 0, 1), (false, 3, 4)] {
            let mut be = backend(
                4,
                FtlConfig {
                    exception_path: exception,
                    ..FtlConfig::default()
                },
            );
            be.ftl
                .write(&mut be.flash, 0, vec![None; 4], SimTime::ZERO)
                .unwrap();
            let mut c = icl(
                CacheConfig {
                    lines: 1,
                    readahead: false,
                    ..CacheConfig::default()
                },
                4,
            );
            let one = SlotMask::from_slots(4, [2]);
            let mut data = vec![None; 4];
            data[2] = page(9);
            c.write(&mut be, 0, &one, data, SimTime::ZERO).unwrap();
            let before = be.flash.stats();
            c.flush_all(&mut be, SimTime::ZERO).unwrap();
            let d = be.flash.stats().delta(&before);
            assert_eq!((d.reads, d.programs), (reads, programs), "exception={exception}");
        }
    }

    #[test]
    fn flush_counts_dirty_lines() {
        let mut be = backend(1, FtlConfig::default());
        let mut c = icl(CacheConfig::default(), 1);
        assert_eq!(c.flush_all(&mut be, SimTime::ZERO).unwrap().0, 0);
        let one = SlotMask::full(1);
        for s in 0..7 {
            c.write(&mut be, s, &one, vec![page(1)], SimTime::ZERO).unwrap();
        }
        assert_eq!(c.flush_all(&mut be, SimTime::ZERO).unwrap().0, 7);
        assert_eq!(c.dirty_lines(), 0);
    }

    #[test]
    fn readahead_below_threshold_is_idle() {
        let mut be = backend(4, FtlConfig::default());
        be.ftl.sequential_fill(&mut be.flash, SimTime::ZERO).unwrap();
        let mut c = icl(CacheConfig::default(), 4);
        let all = SlotMask::full(4);
        for s in 0..3 {
            c.read(&mut be, s, &all, SimTime::ZERO).unwrap();
        }
        assert!(c.take_prefetch_log().is_empty());
        c.read(&mut be, 3, &all, SimTime::ZERO).unwrap();
        let log = c.take_prefetch_log();
        assert_eq!(log.len(), 4);
    }

    #[test]
    fn prefetch_never_evicts_dirty_lines() {
        let mut be = backend(2, FtlConfig::default());
        be.ftl.sequential_fill(&mut be.flash, SimTime::ZERO).unwrap();
        let mut c = icl(
            CacheConfig {
                lines: 4,
                readahead_threshold: 0,
                ..CacheConfig::default()
            },
            2,
        );
        let all = SlotMask::full(2);
        for s in 100..103 {
            c.write(&mut be, s, &all, vec![page(3); 2], SimTime::ZERO).unwrap();
        }
        c.read(&mut be, 0, &all, SimTime::ZERO).unwrap();
        assert_eq!(c.dirty_lines(), 3);
        assert!((100..103).all(|s| c.is_cached(s)));
        // only the single clean line could be recycled
        assert!(c.stats().prefetch_lines <= 2);
    }
}
