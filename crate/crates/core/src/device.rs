//! The SSD as seen by the host interface: request splitting, the data
//! path through the cache or straight to flash, DMA over the host link and
//! the protocol-specific controller stages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Backend;
use crate::flash::{PageBuf, TxnKind};
use crate::ftl::FtlError;
use crate::hil::nvme::Status;
use crate::hil::ocssd::PpaFormat;
use crate::hil::{HostMemory, InterfaceConfig, InterfaceKind, ProtocolError, Segment, HOST_PAGE, SECTOR};
use crate::icl::Icl;
use crate::mask::SlotMask;
use crate::time::SimTime;
use crate::timeline::Timeline;

#[derive(Debug, Error)]
pub enum SimFault {
    #[error("ftl: {0}")]
    Ftl(#[from] FtlError),
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("{0}")]
    Other(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IoOp {
    Read,
    Write,
    Flush,
    VectorRead,
    VectorWrite,
    VectorReset,
}

impl IoOp {
    pub fn is_write(self) -> bool {
        matches!(self, IoOp::Write | IoOp::VectorWrite)
    }

    pub fn is_read(self) -> bool {
        matches!(self, IoOp::Read | IoOp::VectorRead)
    }
}

/// A decoded I/O command with its pointer list already walked.
#[derive(Clone, Debug)]
pub struct IoCommand {
    pub op: IoOp,
    pub slba: u64,
    pub sectors: u32,
    pub segments: Vec<Segment>,
    /// Packed physical addresses for vector commands.
    pub ppas: Vec<u64>,
}

impl IoCommand {
    pub fn bytes(&self) -> u64 {
        self.segments.iter().map(|s| s.len).sum()
    }
}

/// Stage boundaries of one executed command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Executed {
    pub status: Status,
    /// Data ready in device DRAM (reads) or arrived from the host (writes).
    pub mid: SimTime,
    /// Data delivered to host memory (reads) or acknowledged by the cache
    /// or flash (writes).
    pub fw_done: SimTime,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilStats {
    pub commands: u64,
    pub reads: u64,
    pub writes: u64,
    pub flushes: u64,
    pub vector_commands: u64,
    pub read_bytes: u64,
    pub write_bytes: u64,
    pub dma_bytes: u64,
    pub dma_segments: u64,
    pub internal_requests: u64,
    pub errors: u64,
}

pub struct Ssd {
    pub be: Backend,
    pub icl: Icl,
    pub iface: InterfaceConfig,
    link: Timeline,
    controller: Timeline,
    isr: Timeline,
    slots: u32,
    page_bytes: u64,
    ppa: PpaFormat,
    stats: HilStats,
    trace: Option<Vec<String>>,
}

fn is_zero(b: &[u8]) -> bool {
    b.iter().all(|x| *x == 0)
}

impl Ssd {
    pub fn new(be: Backend, icl: Icl, iface: InterfaceConfig) -> Self {
        let g = be.flash.geometry().clone();
        Ssd {
            slots: g.total_planes(),
            page_bytes: g.page_size_bytes as u64,
            ppa: PpaFormat::for_geometry(&g),
            trace: iface.trace.then(Vec::new),
            link: Timeline::new(),
            controller: Timeline::new(),
            isr: Timeline::new(),
            stats: HilStats::default(),
            be,
            icl,
            iface,
        }
    }

    pub fn stats(&self) -> HilStats {
        self.stats
    }

    /// Zeroes every counter in the device, e.g. after preconditioning.
    pub fn reset_stats(&mut self) {
        self.stats = HilStats::default();
        self.be.flash.reset_stats();
        self.be.dram.reset_stats();
        self.be.ftl.reset_stats();
        self.icl.reset_stats();
    }

    pub fn ppa_format(&self) -> PpaFormat {
        self.ppa
    }

    pub fn slots(&self) -> u32 {
        self.slots
    }

    pub fn page_bytes(&self) -> u64 {
        self.page_bytes
    }

    /// Exported capacity in 512-byte sectors.
    pub fn capacity_sectors(&self) -> u64 {
        self.be.ftl.logical_superpages() * self.slots as u64 * self.page_bytes / SECTOR
    }

    pub fn link_busy(&self) -> SimTime {
        self.link.busy_total()
    }

    pub fn trace_line(&mut self, line: String) {
        if let Some(t) = self.trace.as_mut() {
            t.push(line);
        }
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Forgets resource reservations that ended before `now`.
    pub fn retire(&mut self, now: SimTime) {
        self.be.retire(now);
        self.link.retire(now);
        self.controller.retire(now);
        self.isr.retire(now);
    }

    /// Time to fetch one command, including reads of pointer-list pages.
    pub fn fetch_cost(&self, list_pages: u32) -> SimTime {
        self.be.fw.command_fetch().mul(1 + list_pages as u64)
    }

    /// Moves `data` between host memory and the device over the link,
    /// segment by segment, starting no earlier than `now`.
    pub fn dma_transfer(
        &mut self,
        mem: &mut HostMemory,
        segments: &[Segment],
        to_host: bool,
        data: &mut [u8],
        now: SimTime,
    ) -> Result<SimTime, ProtocolError> {
        let mut t = now;
        let mut off = 0usize;
        for s in segments {
            let chunk = &mut data[off..off + s.len as usize];
            if to_host {
                mem.write(s.addr, chunk)?;
            } else {
                mem.read(s.addr, chunk)?;
            }
            off += s.len as usize;
            let start = self.link.reserve(t, self.iface.segment_time(s.len));
            t = start + self.iface.segment_time(s.len);
            self.stats.dma_bytes += s.len;
            self.stats.dma_segments += 1;
        }
        Ok(t)
    }

    /// Admin data transfer to the host. Uses the link but is not counted
    /// with I/O data movement.
    pub fn control_transfer(
        &mut self,
        mem: &mut HostMemory,
        segments: &[Segment],
        data: &[u8],
        now: SimTime,
    ) -> Result<SimTime, ProtocolError> {
        let mut t = now;
        let mut off = 0usize;
        for s in segments {
            mem.write(s.addr, &data[off..off + s.len as usize])?;
            off += s.len as usize;
            let d = self.iface.segment_time(s.len);
            t = self.link.reserve(t, d) + d;
        }
        Ok(t)
    }

    /// Counts a command the front end rejected before execution.
    pub fn reject(&mut self) {
        self.stats.commands += 1;
        self.stats.errors += 1;
    }

    /// Host-controller copy of every 4KB page touched by `segments`.
    fn controller_copy(&mut self, segments: &[Segment], at: SimTime) -> SimTime {
        let pages: u64 = segments
            .iter()
            .map(|s| (s.addr + s.len).div_ceil(HOST_PAGE) - s.addr / HOST_PAGE)
            .sum();
        let d = self.be.fw.controller_copy_per_page().mul(pages);
        self.controller.reserve(at, d) + d
    }

    /// When the host observes completion of work finished at `fw_done`.
    pub fn completion_time(&mut self, fw_done: SimTime) -> SimTime {
        if self.iface.kind.is_htype() {
            let isr = self.be.fw.isr();
            let start = self.isr.reserve(fw_done + self.be.fw.cq_post(), isr);
            start + isr
        } else {
            fw_done + self.be.fw.cq_post() + self.be.fw.msi()
        }
    }

    /// Internal requests for a sector range: (slpn, slot mask).
    pub fn split(&self, slba: u64, sectors: u32) -> Vec<(u64, SlotMask)> {
        let start = slba * SECTOR;
        let end = start + sectors as u64 * SECTOR;
        let first = start / self.page_bytes;
        let last = (end - 1) / self.page_bytes;
        let g = self.slots as u64;
        let mut out: Vec<(u64, SlotMask)> = Vec::new();
        for lpn in first..=last {
            let slpn = lpn / g;
            match out.last_mut() {
                Some((s, m)) if *s == slpn => m.set((lpn % g) as u32),
                _ => out.push((slpn, SlotMask::from_slots(self.slots, [(lpn % g) as u32]))),
            }
        }
        out
    }

    /// Executes a command whose fetch finished at `fetched`.
    pub fn execute(&mut self, mem: &mut HostMemory, cmd: &IoCommand, fetched: SimTime) -> Result<Executed, SimFault> {
        self.stats.commands += 1;
        let t0 = fetched + self.be.fw.hil();
        let r = match cmd.op {
            IoOp::Read | IoOp::Write => {
                if cmd.sectors == 0
                    || cmd.slba + cmd.sectors as u64 > self.capacity_sectors()
                    || cmd.bytes() != cmd.sectors as u64 * SECTOR
                {
                    self.stats.errors += 1;
                    let status = if cmd.bytes() != cmd.sectors as u64 * SECTOR {
                        Status::INVALID_FIELD
                    } else {
                        Status::LBA_OUT_OF_RANGE
                    };
                    return Ok(Executed { status, mid: t0, fw_done: t0 });
                }
                if cmd.op == IoOp::Read {
                    self.read(mem, cmd, t0)
                } else {
                    self.write(mem, cmd, t0)
                }
            }
            IoOp::Flush => {
                self.stats.flushes += 1;
                let (_, done) = self.icl.flush_all(&mut self.be, t0)?;
                Ok(Executed {
                    status: Status::SUCCESS,
                    mid: t0,
                    fw_done: done,
                })
            }
            IoOp::VectorRead | IoOp::VectorWrite | IoOp::VectorReset => self.vector(mem, cmd, t0),
        };
        match r {
            Err(SimFault::Protocol(ProtocolError::HostFault(_))) => {
                self.stats.errors += 1;
                Ok(Executed {
                    status: Status::DATA_TRANSFER_ERROR,
                    mid: t0,
                    fw_done: t0,
                })
            }
            other => other,
        }
    }

    fn read(&mut self, mem: &mut HostMemory, cmd: &IoCommand, t0: SimTime) -> Result<Executed, SimFault> {
        self.stats.reads += 1;
        let total = cmd.sectors as u64 * SECTOR;
        self.stats.read_bytes += total;
        let start_byte = cmd.slba * SECTOR;
        let mut buf = vec![0u8; total as usize];
        let mut ready = t0;
        let mut staged = Vec::new();
        let g = self.slots as u64;
        for (slpn, mask) in self.split(cmd.slba, cmd.sectors) {
            self.stats.internal_requests += 1;
            let r = self.icl.read(&mut self.be, slpn, &mask, t0)?;
            ready = ready.max(r.ready_at);
            staged.push((r.dram_addr, r.bytes));
            for (slot, page) in mask.ones().zip(r.data) {
                let Some(page) = page else { continue };
                let page_start = (slpn * g + slot as u64) * self.page_bytes;
                let lo = start_byte.max(page_start);
                let hi = (start_byte + total).min(page_start + self.page_bytes);
                buf[(lo - start_byte) as usize..(hi - start_byte) as usize]
                    .copy_from_slice(&page[(lo - page_start) as usize..(hi - page_start) as usize]);
            }
        }
        let mut dram_done = ready;
        let size = self.be.dram.config().size_bytes;
        for (addr, len) in staged {
            let len = len.min(size - addr);
            dram_done = dram_done.max(
                self.be
                    .dram
                    .access(addr, len, false, ready)
                    .map_err(|e| SimFault::Other(e.to_string()))?,
            );
        }
        let link_done = self.dma_transfer(mem, &cmd.segments, true, &mut buf, ready)?;
        let mut done = dram_done.max(link_done);
        if self.iface.kind.is_htype() {
            done = self.controller_copy(&cmd.segments, done);
        }
        Ok(Executed {
            status: Status::SUCCESS,
            mid: ready,
            fw_done: done,
        })
    }

    fn write(&mut self, mem: &mut HostMemory, cmd: &IoCommand, t0: SimTime) -> Result<Executed, SimFault> {
        self.stats.writes += 1;
        let total = cmd.sectors as u64 * SECTOR;
        self.stats.write_bytes += total;
        let mut buf = vec![0u8; total as usize];
        let link_start = if self.iface.kind.is_htype() {
            self.controller_copy(&cmd.segments, t0)
        } else {
            t0
        };
        let arrived = self.dma_transfer(mem, &cmd.segments, false, &mut buf, link_start)?;
        let start_byte = cmd.slba * SECTOR;
        let g = self.slots as u64;
        let pb = self.page_bytes;
        let mut done = arrived;
        for (slpn, mask) in self.split(cmd.slba, cmd.sectors) {
            self.stats.internal_requests += 1;
            let mut data: Vec<Option<PageBuf>> = vec![None; self.slots as usize];
            let mut at = arrived;
            for slot in mask.ones() {
                let page_start = (slpn * g + slot as u64) * pb;
                let lo = start_byte.max(page_start);
                let hi = (start_byte + total).min(page_start + pb);
                let src = &buf[(lo - start_byte) as usize..(hi - start_byte) as usize];
                let page: Vec<u8> = if hi - lo == pb {
                    src.to_vec()
                } else {
                    // partial page: merge with the current contents
                    let old = self.icl.read(
                        &mut self.be,
                        slpn,
                        &SlotMask::from_slots(self.slots, [slot]),
                        t0,
                    )?;
                    at = at.max(old.ready_at);
                    let mut p = old
                        .data
                        .into_iter()
                        .next()
                        .flatten()
                        .map(|b| b.into_vec())
                        .unwrap_or_else(|| vec![0; pb as usize]);
                    p[(lo - page_start) as usize..(hi - page_start) as usize].copy_from_slice(src);
                    p
                };
                if !is_zero(&page) {
                    data[slot as usize] = Some(page.into_boxed_slice());
                }
            }
            let w = self.icl.write(&mut self.be, slpn, &mask, data, at)?;
            done = done.max(w.ack_at);
        }
        Ok(Executed {
            status: Status::SUCCESS,
            mid: arrived,
            fw_done: done,
        })
    }

    /// Open-channel vector command: flash is addressed directly, bypassing
    /// the cache and the FTL.
    fn vector(&mut self, mem: &mut HostMemory, cmd: &IoCommand, t0: SimTime) -> Result<Executed, SimFault> {
        self.stats.vector_commands += 1;
        let g = self.be.flash.geometry().clone();
        let mut addrs = Vec::with_capacity(cmd.ppas.len());
        for &p in &cmd.ppas {
            match self.ppa.unpack(&g, p) {
                Some(a) => addrs.push(a),
                None => {
                    self.stats.errors += 1;
                    return Ok(Executed {
                        status: Status::INVALID_FIELD,
                        mid: t0,
                        fw_done: t0,
                    });
                }
            }
        }
        let pb = self.page_bytes;
        let issue = t0 + self.be.fw.fil_schedule();
        let fail = |s: Status, t: SimTime| Executed {
            status: s,
            mid: t,
            fw_done: t,
        };
        match cmd.op {
            IoOp::VectorWrite => {
                if cmd.bytes() != pb * addrs.len() as u64 {
                    return Ok(fail(Status::INVALID_FIELD, t0));
                }
                self.stats.writes += 1;
                self.stats.write_bytes += cmd.bytes();
                let mut buf = vec![0u8; cmd.bytes() as usize];
                let arrived = self.dma_transfer(mem, &cmd.segments, false, &mut buf, t0)?;
                let staging = self.icl.staging_addr(buf.len() as u64);
                let len = (buf.len() as u64).min(self.be.dram.config().size_bytes - staging);
                let staged = self
                    .be
                    .dram
                    .access(staging, len, true, arrived)
                    .map_err(|e| SimFault::Other(e.to_string()))?;
                let mut done = staged.max(issue);
                for (i, a) in addrs.into_iter().enumerate() {
                    let chunk = &buf[i * pb as usize..(i + 1) * pb as usize];
                    let data = (!is_zero(chunk)).then(|| chunk.to_vec().into_boxed_slice());
                    match self.be.flash.program(a, data, staged.max(issue)) {
                        Ok(c) => done = done.max(c.txn.done_at),
                        Err(_) => {
                            self.stats.errors += 1;
                            return Ok(fail(Status::WRITE_FAULT, done));
                        }
                    }
                }
                Ok(Executed {
                    status: Status::SUCCESS,
                    mid: arrived,
                    fw_done: done,
                })
            }
            IoOp::VectorRead => {
                if cmd.bytes() != pb * addrs.len() as u64 {
                    return Ok(fail(Status::INVALID_FIELD, t0));
                }
                self.stats.reads += 1;
                self.stats.read_bytes += cmd.bytes();
                let mut buf = vec![0u8; cmd.bytes() as usize];
                let mut ready = issue;
                for (i, a) in addrs.into_iter().enumerate() {
                    match self.be.flash.read(a, issue) {
                        Ok(c) => {
                            ready = ready.max(c.txn.done_at);
                            if let Some(d) = c.data {
                                buf[i * pb as usize..(i + 1) * pb as usize].copy_from_slice(&d);
                            }
                        }
                        Err(_) => {
                            self.stats.errors += 1;
                            return Ok(fail(Status::UNRECOVERED_READ, issue));
                        }
                    }
                }
                let staging = self.icl.staging_addr(buf.len() as u64);
                let len = (buf.len() as u64).min(self.be.dram.config().size_bytes - staging);
                let staged = self
                    .be
                    .dram
                    .access(staging, len, true, ready)
                    .map_err(|e| SimFault::Other(e.to_string()))?;
                let link_done = self.dma_transfer(mem, &cmd.segments, true, &mut buf, staged)?;
                Ok(Executed {
                    status: Status::SUCCESS,
                    mid: staged,
                    fw_done: link_done,
                })
            }
            IoOp::VectorReset => {
                let mut done = issue;
                for a in addrs {
                    let mut blk = a;
                    blk.page = 0;
                    match self.be.flash.submit(TxnKind::Erase, blk, None, issue) {
                        Ok(c) => done = done.max(c.txn.done_at),
                        Err(_) => {
                            self.stats.errors += 1;
                            return Ok(fail(Status::WRITE_FAULT, done));
                        }
                    }
                }
                Ok(Executed {
                    status: Status::SUCCESS,
                    mid: issue,
                    fw_done: done,
                })
            }
            _ => unreachable!("vector() only handles vector opcodes"),
        }
    }

    pub fn is_ocssd(&self) -> bool {
        self.iface.kind == InterfaceKind::Ocssd
    }
}
