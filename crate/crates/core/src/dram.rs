//! Internal DRAM timing with per-bank row-buffer state.
//!
//! An access is split into bursts that are interleaved across banks on
//! burst-aligned address bits. Each burst pays `t_cl` on a row hit, or
//! `t_rp + t_rcd + t_cl` on a row miss (`t_rcd + t_cl` when the bank has no
//! open row), and then occupies the shared data bus for one burst time.
//! Whole accesses are serialized on the channel, so every bank a previous
//! access touched is idle when the next access begins.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;
use crate::timeline::Timeline;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PagePolicy {
    Open,
    Close,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DramConfig {
    pub size_bytes: u64,
    pub channels: u32,
    pub ranks: u32,
    pub banks: u32,
    pub chips: u32,
    /// Data width of one chip; the rank is `chips * bus_width_bits` wide.
    pub bus_width_bits: u32,
    pub t_rp: SimTime,
    pub t_rcd: SimTime,
    pub t_cl: SimTime,
    pub burst_bytes: u32,
    pub io_mhz: f64,
    pub ddr: bool,
    /// Bytes held by one row of one bank.
    pub row_bytes: u32,
    pub page_policy: PagePolicy,
    /// Energy charged per burst, in nanojoules.
    pub energy_per_burst_nj: f64,
}

impl DramConfig {
    pub fn validate(&self) -> Result<(), String> {
        let mut bad = Vec::new();
        if self.size_bytes == 0 {
            bad.push("dram.size_bytes must be positive".to_string());
        }
        for (n, v) in [
            ("channels", self.channels),
            ("ranks", self.ranks),
            ("banks", self.banks),
            ("chips", self.chips),
            ("bus_width_bits", self.bus_width_bits),
            ("burst_bytes", self.burst_bytes),
            ("row_bytes", self.row_bytes),
        ] {
            if v == 0 {
                bad.push(format!("dram.{n} must be >= 1"));
            }
        }
        for (n, v) in [("t_rp", self.t_rp), ("t_rcd", self.t_rcd), ("t_cl", self.t_cl)] {
            if v == SimTime::ZERO {
                bad.push(format!("dram.{n} must be positive"));
            }
        }
        if !(self.io_mhz > 0.0) {
            bad.push("dram.io_mhz must be positive".into());
        }
        if self.burst_bytes > 0 && !self.row_bytes.is_multiple_of(self.burst_bytes) {
            bad.push("dram.row_bytes must be a multiple of burst_bytes".into());
        }
        if self.energy_per_burst_nj < 0.0 {
            bad.push("dram.energy_per_burst_nj must be non-negative".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad.join("; "))
        }
    }

    /// Data-bus occupancy of one burst.
    pub fn burst_time(&self) -> SimTime {
        let bytes_per_cycle =
            (self.chips * self.bus_width_bits / 8) as f64 * if self.ddr { 2.0 } else { 1.0 };
        let cycles = self.burst_bytes as f64 / bytes_per_cycle;
        SimTime::from_ps((cycles * 1e6 / self.io_mhz).ceil() as u64)
    }

    /// DDR3L-1600, 4 x8 chips, 8 banks, 13.75 ns tRP/tRCD/tCL.
    pub fn ddr3l_1600(size_bytes: u64) -> Self {
        DramConfig {
            size_bytes,
            channels: 1,
            ranks: 1,
            banks: 8,
            chips: 4,
            bus_width_bits: 8,
            t_rp: SimTime::from_ns_f64(13.75),
            t_rcd: SimTime::from_ns_f64(13.75),
            t_cl: SimTime::from_ns_f64(13.75),
            burst_bytes: 32,
            io_mhz: 800.0,
            ddr: true,
            row_bytes: 4096,
            page_policy: PagePolicy::Open,
            energy_per_burst_nj: 0.5,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("DRAM access [{addr}, {addr}+{len}) outside {size} bytes")]
pub struct DramFault {
    pub addr: u64,
    pub len: u64,
    pub size: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BankState {
    pub open_row: Option<u64>,
    pub busy_until: SimTime,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramStats {
    pub accesses: u64,
    pub bursts: u64,
    pub row_hits: u64,
    pub row_misses: u64,
    pub bytes: u64,
}

pub struct Dram {
    cfg: DramConfig,
    banks: Vec<BankState>,
    bus: Timeline,
    stats: DramStats,
}

impl Dram {
    pub fn new(cfg: DramConfig) -> Self {
        Dram {
            banks: vec![BankState::default(); cfg.banks as usize],
            bus: Timeline::new(),
            stats: DramStats::default(),
            cfg,
        }
    }

    pub fn config(&self) -> &DramConfig {
        &self.cfg
    }

    pub fn stats(&self) -> DramStats {
        self.stats
    }

    pub fn bank(&self, i: usize) -> BankState {
        self.banks[i]
    }

    pub fn reset_stats(&mut self) {
        self.stats = DramStats::default();
    }

    pub fn retire(&mut self, now: SimTime) {
        self.bus.retire(now);
    }

    fn locate(&self, burst: u64) -> (usize, u64) {
        let banks = self.cfg.banks as u64;
        let bursts_per_row = (self.cfg.row_bytes / self.cfg.burst_bytes) as u64;
        ((burst % banks) as usize, burst / banks / bursts_per_row)
    }

    /// Length of the burst schedule for `[addr, addr+len)` starting with the
    /// current bank state. Updates the open rows when `commit` is set.
    fn schedule(&mut self, addr: u64, len: u64, commit: bool) -> (SimTime, u64, u64) {
        let burst = self.cfg.burst_bytes as u64;
        let bt = self.cfg.burst_time();
        let first = addr / burst;
        let last = (addr + len).div_ceil(burst);
        let mut bank_free = vec![SimTime::ZERO; self.banks.len()];
        let mut open: Vec<Option<u64>> = self.banks.iter().map(|b| b.open_row).collect();
        let mut bus_free = SimTime::ZERO;
        let (mut hits, mut misses) = (0, 0);
        for b in first..last {
            let (bank, row) = self.locate(b);
            let ready = match open[bank] {
                Some(r) if r == row => {
                    hits += 1;
                    bank_free[bank] + self.cfg.t_cl
                }
                Some(_) => {
                    misses += 1;
                    bank_free[bank] + self.cfg.t_rp + self.cfg.t_rcd + self.cfg.t_cl
                }
                None => {
                    misses += 1;
                    bank_free[bank] + self.cfg.t_rcd + self.cfg.t_cl
                }
            };
            open[bank] = Some(row);
            let data_start = ready.max(bus_free);
            bus_free = data_start + bt;
            bank_free[bank] = bus_free;
        }
        if commit {
            for (i, st) in self.banks.iter_mut().enumerate() {
                st.open_row = match self.cfg.page_policy {
                    PagePolicy::Open => open[i],
                    PagePolicy::Close => None,
                };
            }
        }
        (bus_free, hits, misses)
    }

    /// Services `[addr, addr+len)` no earlier than `now` and returns its
    /// completion time.
    pub fn access(
        &mut self,
        addr: u64,
        len: u64,
        _is_write: bool,
        now: SimTime,
    ) -> Result<SimTime, DramFault> {
        if addr.checked_add(len).is_none_or(|e| e > self.cfg.size_bytes) {
            return Err(DramFault {
                addr,
                len,
                size: self.cfg.size_bytes,
            });
        }
        if len == 0 {
            return Ok(now);
        }
        let (duration, hits, misses) = self.schedule(addr, len, false);
        let start = self.bus.reserve(now, duration);
        self.schedule(addr, len, true);
        let end = start + duration;
        let burst = self.cfg.burst_bytes as u64;
        for b in addr / burst..(addr + len).div_ceil(burst) {
            let (bank, _) = self.locate(b);
            let st = &mut self.banks[bank];
            st.busy_until = st.busy_until.max(end);
        }
        self.stats.accesses += 1;
        self.stats.bursts += hits + misses;
        self.stats.row_hits += hits;
        self.stats.row_misses += misses;
        self.stats.bytes += len;
        Ok(end)
    }

    /// Table-driven energy of moving `length` bytes, in nanojoules.
    pub fn energy_of_access(&self, length: u64, _is_write: bool) -> f64 {
        let bursts = length.div_ceil(self.cfg.burst_bytes as u64);
        bursts as f64 * self.cfg.energy_per_burst_nj
    }
}
