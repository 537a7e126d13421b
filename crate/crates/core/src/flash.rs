//! The storage complex: channel/way/die/plane topology, per-command cell
//! timings, channel-bus contention and the in-order/no-overwrite rules of
//! NAND flash.
//!
//! Every plane is an independent cell resource served in FIFO order. A
//! channel bus is held only while command cycles or page data move across
//! it, so one die's cell phase overlaps another die's transfer on the same
//! channel.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;
use crate::timeline::Timeline;

/// One page of payload bytes.
pub type PageBuf = Box<[u8]>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlashGeometry {
    pub channels: u32,
    pub packages_per_channel: u32,
    pub dies_per_package: u32,
    pub planes_per_die: u32,
    pub blocks_per_plane: u32,
    pub pages_per_block: u32,
    pub page_size_bytes: u32,
}

impl FlashGeometry {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("channels", self.channels),
            ("packages_per_channel", self.packages_per_channel),
            ("dies_per_package", self.dies_per_package),
            ("planes_per_die", self.planes_per_die),
            ("blocks_per_plane", self.blocks_per_plane),
            ("pages_per_block", self.pages_per_block),
            ("page_size_bytes", self.page_size_bytes),
        ];
        let bad: Vec<_> = fields
            .iter()
            .filter(|(_, v)| *v == 0)
            .map(|(n, _)| format!("geometry.{n} must be >= 1"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad.join("; "))
        }
    }

    /// Planes across the whole device; also the number of page slots in a
    /// super-page.
    pub fn total_planes(&self) -> u32 {
        self.channels * self.packages_per_channel * self.dies_per_package * self.planes_per_die
    }

    pub fn total_blocks(&self) -> u64 {
        self.total_planes() as u64 * self.blocks_per_plane as u64
    }

    pub fn total_pages(&self) -> u64 {
        self.total_blocks() * self.pages_per_block as u64
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.total_pages() * self.page_size_bytes as u64
    }

    /// Physical location of super-page slot `slot`. Channels vary fastest so
    /// consecutive slots stripe across channels, then ways, dies, planes.
    pub fn slot_address(&self, slot: u32, block: u32, page: u32) -> FlashAddress {
        let c = self.channels;
        let w = self.packages_per_channel;
        let d = self.dies_per_package;
        FlashAddress {
            channel: slot % c,
            way: (slot / c) % w,
            die: (slot / (c * w)) % d,
            plane: slot / (c * w * d),
            block,
            page,
        }
    }

    pub fn slot_of(&self, a: &FlashAddress) -> u32 {
        let c = self.channels;
        let w = self.packages_per_channel;
        let d = self.dies_per_package;
        a.channel + c * (a.way + w * (a.die + d * a.plane))
    }

    pub fn check(&self, a: &FlashAddress) -> Result<(), FlashError> {
        if a.channel < self.channels
            && a.way < self.packages_per_channel
            && a.die < self.dies_per_package
            && a.plane < self.planes_per_die
            && a.block < self.blocks_per_plane
            && a.page < self.pages_per_block
        {
            Ok(())
        } else {
            Err(FlashError::AddressFault(*a))
        }
    }

    /// Dense index of the physical block holding `a`.
    pub fn block_index(&self, a: &FlashAddress) -> usize {
        self.slot_of(a) as usize * self.blocks_per_plane as usize + a.block as usize
    }

    /// Dense index of the physical page `a`.
    pub fn page_index(&self, a: &FlashAddress) -> u64 {
        self.block_index(a) as u64 * self.pages_per_block as u64 + a.page as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlashAddress {
    pub channel: u32,
    pub way: u32,
    pub die: u32,
    pub plane: u32,
    pub block: u32,
    pub page: u32,
}

impl fmt::Display for FlashAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ch{}/w{}/d{}/p{}/b{}/pg{}",
            self.channel, self.way, self.die, self.plane, self.block, self.page
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlashTimingParams {
    pub t_read_fast: SimTime,
    pub t_read_slow: SimTime,
    pub t_prog_fast: SimTime,
    pub t_prog_slow: SimTime,
    pub t_erase: SimTime,
    pub channel_mhz: f64,
    pub bus_width_bits: u32,
    pub ddr: bool,
    /// Bus cycles spent on each command/address phase.
    pub command_cycles: u32,
    /// Fast/slow page pairing, repeated over the page index. `true` marks a
    /// slow page. Defaults to even = fast, odd = slow.
    pub slow_page_pattern: Vec<bool>,
}

impl FlashTimingParams {
    pub fn validate(&self) -> Result<(), String> {
        let mut bad = Vec::new();
        for (n, v) in [
            ("t_read_fast", self.t_read_fast),
            ("t_read_slow", self.t_read_slow),
            ("t_prog_fast", self.t_prog_fast),
            ("t_prog_slow", self.t_prog_slow),
            ("t_erase", self.t_erase),
        ] {
            if v == SimTime::ZERO {
                bad.push(format!("timing.{n} must be positive"));
            }
        }
        if self.t_prog_slow < self.t_prog_fast {
            bad.push("timing.t_prog_slow must be >= t_prog_fast".into());
        }
        if self.t_erase < self.t_prog_slow {
            bad.push("timing.t_erase must be >= t_prog_slow".into());
        }
        if !(self.channel_mhz > 0.0) {
            bad.push("timing.channel_mhz must be positive".into());
        }
        if self.bus_width_bits == 0 || !self.bus_width_bits.is_multiple_of(8) {
            bad.push("timing.bus_width_bits must be a positive multiple of 8".into());
        }
        if self.slow_page_pattern.is_empty() {
            bad.push("timing.slow_page_pattern must not be empty".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad.join("; "))
        }
    }

    fn bytes_per_cycle(&self) -> u64 {
        (self.bus_width_bits / 8) as u64 * if self.ddr { 2 } else { 1 }
    }

    fn cycles_time(&self, cycles: u64) -> SimTime {
        // cycles / (mhz * 1e6) seconds, in picoseconds, rounded up
        SimTime::from_ps((cycles as f64 * 1e6 / self.channel_mhz).ceil() as u64)
    }

    /// Time to move `bytes` over a channel bus, rounded up to a whole bus
    /// cycle.
    pub fn bus_transfer_time(&self, bytes: u64) -> SimTime {
        if bytes == 0 {
            return SimTime::ZERO;
        }
        self.cycles_time(bytes.div_ceil(self.bytes_per_cycle()))
    }

    pub fn command_time(&self) -> SimTime {
        self.cycles_time(self.command_cycles as u64)
    }

    pub fn is_slow_page(&self, page: u32) -> bool {
        self.slow_page_pattern[page as usize % self.slow_page_pattern.len()]
    }

    /// Bytes per second a channel bus can sustain.
    pub fn bus_bytes_per_sec(&self) -> f64 {
        self.channel_mhz * 1e6 * self.bytes_per_cycle() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxnKind {
    Read,
    Program,
    Erase,
}

/// A flash command and its timing lifecycle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlashTransaction {
    pub kind: TxnKind,
    pub address: FlashAddress,
    pub issued_at: SimTime,
    pub bus_start: SimTime,
    pub cell_start: SimTime,
    pub done_at: SimTime,
    pub payload_len: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FlashError {
    #[error("flash address out of range: {0}")]
    AddressFault(FlashAddress),
    #[error("program to unerased page {0} (flash does not allow overwrite)")]
    OverwriteFault(FlashAddress),
    #[error("out-of-order program at {addr}: next programmable page is {expected}")]
    InOrderViolation { addr: FlashAddress, expected: u32 },
    #[error("read of erased page {0}")]
    UninitializedRead(FlashAddress),
    #[error("erase must address page 0 of the block, got {0}")]
    ErasePageNonZero(FlashAddress),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlashStats {
    pub reads: u64,
    pub programs: u64,
    pub erases: u64,
    pub read_bytes: u64,
    pub program_bytes: u64,
}

impl FlashStats {
    pub fn delta(&self, earlier: &FlashStats) -> FlashStats {
        FlashStats {
            reads: self.reads - earlier.reads,
            programs: self.programs - earlier.programs,
            erases: self.erases - earlier.erases,
            read_bytes: self.read_bytes - earlier.read_bytes,
            program_bytes: self.program_bytes - earlier.program_bytes,
        }
    }
}

/// Result of a submitted transaction. Reads carry the stored payload, or
/// `None` when the page was programmed without one (reads as zeros).
#[derive(Debug)]
pub struct FlashCompletion {
    pub txn: FlashTransaction,
    pub data: Option<PageBuf>,
}

pub struct FlashBackend {
    geometry: FlashGeometry,
    timing: FlashTimingParams,
    buses: Vec<Timeline>,
    plane_free: Vec<SimTime>,
    /// Next programmable page per physical block.
    write_cursor: Vec<u32>,
    erase_counts: Vec<u32>,
    data: HashMap<u64, PageBuf>,
    log: Option<Vec<FlashTransaction>>,
    stats: FlashStats,
    timed: bool,
}

impl FlashBackend {
    pub fn new(geometry: FlashGeometry, timing: FlashTimingParams) -> Self {
        let blocks = geometry.total_blocks() as usize;
        FlashBackend {
            buses: vec![Timeline::new(); geometry.channels as usize],
            plane_free: vec![SimTime::ZERO; geometry.total_planes() as usize],
            write_cursor: vec![0; blocks],
            erase_counts: vec![0; blocks],
            data: HashMap::new(),
            log: None,
            stats: FlashStats::default(),
            timed: true,
            geometry,
            timing,
        }
    }

    pub fn geometry(&self) -> &FlashGeometry {
        &self.geometry
    }

    pub fn timing(&self) -> &FlashTimingParams {
        &self.timing
    }

    pub fn stats(&self) -> FlashStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = FlashStats::default();
    }

    /// Starts recording every timed transaction.
    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn log(&self) -> &[FlashTransaction] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn take_log(&mut self) -> Vec<FlashTransaction> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// With timing off, operations change flash state instantly and are not
    /// logged. Used for functional preconditioning.
    pub fn set_timed(&mut self, timed: bool) {
        self.timed = timed;
    }

    /// Forgets bus and plane reservations that ended before `now`.
    pub fn retire(&mut self, now: SimTime) {
        for bus in &mut self.buses {
            bus.retire(now);
        }
    }

    pub fn bus_busy_total(&self, channel: u32) -> SimTime {
        self.buses[channel as usize].busy_total()
    }

    pub fn erase_count(&self, addr: &FlashAddress) -> u32 {
        self.erase_counts[self.geometry.block_index(addr)]
    }

    pub fn erase_counts(&self) -> &[u32] {
        &self.erase_counts
    }

    /// Next programmable page of the block containing `addr`.
    pub fn write_pointer(&self, addr: &FlashAddress) -> u32 {
        self.write_cursor[self.geometry.block_index(addr)]
    }

    pub fn is_programmed(&self, addr: &FlashAddress) -> bool {
        addr.page < self.write_pointer(addr)
    }

    /// Payload held at `addr`, without issuing a transaction.
    pub fn stored(&self, addr: &FlashAddress) -> Option<&[u8]> {
        self.data.get(&self.geometry.page_index(addr)).map(|b| &b[..])
    }

    pub fn cell_latency(&self, kind: TxnKind, addr: &FlashAddress) -> Result<SimTime, FlashError> {
        self.geometry.check(addr)?;
        let slow = self.timing.is_slow_page(addr.page);
        Ok(match (kind, slow) {
            (TxnKind::Read, false) => self.timing.t_read_fast,
            (TxnKind::Read, true) => self.timing.t_read_slow,
            (TxnKind::Program, false) => self.timing.t_prog_fast,
            (TxnKind::Program, true) => self.timing.t_prog_slow,
            (TxnKind::Erase, _) => self.timing.t_erase,
        })
    }

    pub fn bus_transfer_time(&self, bytes: u64) -> SimTime {
        self.timing.bus_transfer_time(bytes)
    }

    pub fn read(&mut self, addr: FlashAddress, at: SimTime) -> Result<FlashCompletion, FlashError> {
        self.submit(TxnKind::Read, addr, None, at)
    }

    pub fn program(
        &mut self,
        addr: FlashAddress,
        data: Option<PageBuf>,
        at: SimTime,
    ) -> Result<FlashCompletion, FlashError> {
        self.submit(TxnKind::Program, addr, data, at)
    }

    /// Erases the block containing `addr` (page index must be 0).
    pub fn erase(&mut self, addr: FlashAddress, at: SimTime) -> Result<FlashCompletion, FlashError> {
        self.submit(TxnKind::Erase, addr, None, at)
    }

    /// Queues one transaction on its channel and plane, starting no earlier
    /// than `at`, and returns its timing.
    pub fn submit(
        &mut self,
        kind: TxnKind,
        addr: FlashAddress,
        data: Option<PageBuf>,
        at: SimTime,
    ) -> Result<FlashCompletion, FlashError> {
        let cell = self.cell_latency(kind, &addr)?;
        let block = self.geometry.block_index(&addr);
        let page_id = self.geometry.page_index(&addr);
        let page_bytes = self.geometry.page_size_bytes as u64;

        // functional checks first; a faulted command leaves no trace
        match kind {
            TxnKind::Read => {
                if addr.page >= self.write_cursor[block] {
                    return Err(FlashError::UninitializedRead(addr));
                }
            }
            TxnKind::Program => {
                let cursor = self.write_cursor[block];
                if addr.page < cursor {
                    return Err(FlashError::OverwriteFault(addr));
                }
                if addr.page > cursor {
                    return Err(FlashError::InOrderViolation {
                        addr,
                        expected: cursor,
                    });
                }
            }
            TxnKind::Erase => {
                if addr.page != 0 {
                    return Err(FlashError::ErasePageNonZero(addr));
                }
            }
        }

        let txn = if self.timed {
            self.schedule(kind, addr, cell, page_bytes, at)
        } else {
            FlashTransaction {
                kind,
                address: addr,
                issued_at: at,
                bus_start: at,
                cell_start: at,
                done_at: at,
                payload_len: 0,
            }
        };

        let mut out = None;
        match kind {
            TxnKind::Read => {
                self.stats.reads += 1;
                self.stats.read_bytes += page_bytes;
                out = self.data.get(&page_id).cloned();
            }
            TxnKind::Program => {
                self.stats.programs += 1;
                self.stats.program_bytes += page_bytes;
                self.write_cursor[block] += 1;
                match data {
                    Some(d) => {
                        debug_assert_eq!(d.len() as u64, page_bytes);
                        self.data.insert(page_id, d);
                    }
                    None => {
                        self.data.remove(&page_id);
                    }
                }
            }
            TxnKind::Erase => {
                self.stats.erases += 1;
                let first = block as u64 * self.geometry.pages_per_block as u64;
                for p in 0..self.write_cursor[block] as u64 {
                    self.data.remove(&(first + p));
                }
                self.write_cursor[block] = 0;
                self.erase_counts[block] += 1;
            }
        }
        if self.timed {
            if let Some(log) = self.log.as_mut() {
                log.push(txn.clone());
            }
        }
        Ok(FlashCompletion { txn, data: out })
    }

    fn schedule(
        &mut self,
        kind: TxnKind,
        addr: FlashAddress,
        cell: SimTime,
        page_bytes: u64,
        at: SimTime,
    ) -> FlashTransaction {
        let plane = self.geometry.slot_of(&addr) as usize;
        let bus = &mut self.buses[addr.channel as usize];
        let cmd = self.timing.command_time();
        let xfer = self.timing.bus_transfer_time(page_bytes);
        let ready = at.max(self.plane_free[plane]);
        let (bus_start, cell_start, done_at, payload_len) = match kind {
            TxnKind::Read => {
                let bus_start = bus.reserve(ready, cmd);
                let cell_start = bus_start + cmd;
                let out_start = bus.reserve(cell_start + cell, xfer);
                (bus_start, cell_start, out_start + xfer, page_bytes as u32)
            }
            TxnKind::Program => {
                let bus_start = bus.reserve(ready, cmd + xfer);
                let cell_start = bus_start + cmd + xfer;
                (bus_start, cell_start, cell_start + cell, page_bytes as u32)
            }
            TxnKind::Erase => {
                let bus_start = bus.reserve(ready, cmd);
                let cell_start = bus_start + cmd;
                (bus_start, cell_start, cell_start + cell, 0)
            }
        };
        // the plane stays owned until its page register drains
        self.plane_free[plane] = done_at;
        FlashTransaction {
            kind,
            address: addr,
            issued_at: at,
            bus_start,
            cell_start,
            done_at,
            payload_len,
        }
    }
}

/// Table-1 style MLC timings with an ONFi 3 333 MHz DDR 8-bit bus.
pub fn mlc_table_timings() -> FlashTimingParams {
    FlashTimingParams {
        t_read_fast: SimTime::from_us_f64(59.975),
        t_read_slow: SimTime::from_us_f64(104.956),
        t_prog_fast: SimTime::from_us_f64(820.62),
        t_prog_slow: SimTime::from_us_f64(2250.0),
        t_erase: SimTime::from_us_f64(3000.0),
        channel_mhz: 333.0,
        bus_width_bits: 8,
        ddr: true,
        command_cycles: 5,
        slow_page_pattern: vec![false, true],
    }
}
