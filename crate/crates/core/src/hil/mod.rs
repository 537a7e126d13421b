//! Host interface: virtual host memory, queue protocols, pointer lists and
//! link timing.

pub mod arbiter;
pub mod htype;
pub mod nvme;
pub mod ocssd;
pub mod prp;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arbiter::{Arbiter, Arbitration};
pub use prp::Segment;

use crate::time::SimTime;

pub const HOST_PAGE: u64 = 4096;
pub const SECTOR: u64 = 512;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("host memory fault at {0:#x}: page not backed")]
    HostFault(u64),
    #[error("pointer list covers {covered} of {needed} bytes")]
    TransferLength { covered: u64, needed: u64 },
    #[error("unaligned PRP entry {0:#x}")]
    UnalignedPrp(u64),
    #[error("SGL descriptor type {0:#x} not supported")]
    UnsupportedSgl(u8),
    #[error("doorbell for queue {qid}: value {value} invalid ({reason})")]
    Doorbell { qid: u16, value: u32, reason: &'static str },
    #[error("no such queue {0}")]
    NoQueue(u16),
    #[error("command list full ({0} outstanding)")]
    QueueFull(usize),
}

/// Sparse host DRAM made of 4KB pages. Accessing an unbacked page faults.
#[derive(Default)]
pub struct HostMemory {
    pages: HashMap<u64, Box<[u8]>>,
    next: u64,
}

impl HostMemory {
    pub fn new() -> Self {
        HostMemory {
            pages: HashMap::new(),
            next: 0x10_0000,
        }
    }

    /// Backs `bytes` (rounded up to pages) of zeroed memory and returns the
    /// page-aligned base address.
    pub fn alloc(&mut self, bytes: u64) -> u64 {
        let base = self.next;
        let pages = bytes.max(1).div_ceil(HOST_PAGE);
        for i in 0..pages {
            self.pages
                .insert(base + i * HOST_PAGE, vec![0u8; HOST_PAGE as usize].into_boxed_slice());
        }
        // leave an unbacked guard page between allocations
        self.next = base + (pages + 1) * HOST_PAGE;
        base
    }

    pub fn free(&mut self, base: u64, bytes: u64) {
        for i in 0..bytes.max(1).div_ceil(HOST_PAGE) {
            self.pages.remove(&(base + i * HOST_PAGE));
        }
    }

    pub fn is_backed(&self, addr: u64) -> bool {
        self.pages.contains_key(&(addr / HOST_PAGE * HOST_PAGE))
    }

    pub fn read(&self, addr: u64, out: &mut [u8]) -> Result<(), ProtocolError> {
        let mut done = 0usize;
        while done < out.len() {
            let a = addr + done as u64;
            let base = a / HOST_PAGE * HOST_PAGE;
            let off = (a - base) as usize;
            let page = self.pages.get(&base).ok_or(ProtocolError::HostFault(a))?;
            let n = (HOST_PAGE as usize - off).min(out.len() - done);
            out[done..done + n].copy_from_slice(&page[off..off + n]);
            done += n;
        }
        Ok(())
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) -> Result<(), ProtocolError> {
        let mut done = 0usize;
        while done < data.len() {
            let a = addr + done as u64;
            let base = a / HOST_PAGE * HOST_PAGE;
            let off = (a - base) as usize;
            let page = self.pages.get_mut(&base).ok_or(ProtocolError::HostFault(a))?;
            let n = (HOST_PAGE as usize - off).min(data.len() - done);
            page[off..off + n].copy_from_slice(&data[done..done + n]);
            done += n;
        }
        Ok(())
    }

    pub fn read_u64(&self, addr: u64) -> Result<u64, ProtocolError> {
        let mut b = [0u8; 8];
        self.read(addr, &mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn write_u64(&mut self, addr: u64, v: u64) -> Result<(), ProtocolError> {
        self.write(addr, &v.to_le_bytes())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterfaceKind {
    Nvme,
    Sata,
    Ufs,
    Ocssd,
}

impl InterfaceKind {
    /// Hardware-driven interfaces with a host controller and one 32-slot queue.
    pub fn is_htype(self) -> bool {
        matches!(self, InterfaceKind::Sata | InterfaceKind::Ufs)
    }
}

/// Command slots of the SATA / UFS host controller.
pub const HTYPE_SLOTS: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterfaceConfig {
    pub kind: InterfaceKind,
    pub pcie_lanes: u32,
    /// Per-lane transfer rate in GT/s (128b/130b encoding).
    pub pcie_gts: f64,
    /// SATA line rate in Gb/s (8b/10b encoding).
    pub sata_gbps: f64,
    pub ufs_lanes: u32,
    /// UFS per-lane line rate in Gb/s (8b/10b encoding).
    pub ufs_gbps: f64,
    /// Overrides the link rate derived above, in MB/s (1e6 bytes).
    pub link_mb_s: Option<f64>,
    /// Fixed cost per DMA segment on the link.
    pub per_segment_overhead_ns: f64,
    /// I/O submission/completion queue pairs created by the host (NVMe).
    pub io_queues: u32,
    pub queue_entries: u32,
    pub arbitration: Arbitration,
    /// Per-queue WRR weights; missing entries default to 1.
    pub wrr_weights: Vec<u32>,
    /// Record one text line per SQ fetch and CQ post.
    pub trace: bool,
    /// Host describes I/O buffers with one SGL data-block descriptor
    /// instead of PRPs (NVMe only).
    pub sgl: bool,
}

impl Default for InterfaceConfig {
    fn default() -> Self {
        InterfaceConfig {
            kind: InterfaceKind::Nvme,
            pcie_lanes: 4,
            pcie_gts: 8.0,
            sata_gbps: 6.0,
            ufs_lanes: 2,
            ufs_gbps: 5.8304,
            link_mb_s: None,
            per_segment_overhead_ns: 40.0,
            io_queues: 1,
            queue_entries: 1024,
            arbitration: Arbitration::Rr,
            wrr_weights: Vec::new(),
            trace: false,
            sgl: false,
        }
    }
}

impl InterfaceConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.pcie_lanes == 0 || !(self.pcie_gts > 0.0) {
            bad.push("interface: pcie_lanes and pcie_gts must be positive".into());
        }
        if !(self.sata_gbps > 0.0) || self.ufs_lanes == 0 || !(self.ufs_gbps > 0.0) {
            bad.push("interface: sata/ufs link rates must be positive".into());
        }
        if let Some(r) = self.link_mb_s {
            if !(r > 0.0) {
                bad.push(format!("interface.link_mb_s {r} must be positive"));
            }
        }
        if !(self.per_segment_overhead_ns >= 0.0) {
            bad.push("interface.per_segment_overhead_ns must be non-negative".into());
        }
        if self.io_queues == 0 || self.io_queues > 65535 {
            bad.push(format!("interface.io_queues {} must be in 1..=65535", self.io_queues));
        }
        if self.queue_entries < 2 || self.queue_entries > 65536 {
            bad.push(format!(
                "interface.queue_entries {} must be in 2..=65536",
                self.queue_entries
            ));
        }
        if self.sgl && self.kind != InterfaceKind::Nvme {
            bad.push("interface.sgl applies to the nvme interface only".into());
        }
        if self.wrr_weights.contains(&0) {
            bad.push("interface.wrr_weights must be positive".into());
        }
        bad
    }

    /// Payload bandwidth of the host link in bytes per second.
    pub fn link_bytes_per_sec(&self) -> f64 {
        if let Some(mb) = self.link_mb_s {
            return mb * 1e6;
        }
        match self.kind {
            InterfaceKind::Nvme | InterfaceKind::Ocssd => {
                self.pcie_lanes as f64 * self.pcie_gts * 1e9 * (128.0 / 130.0) / 8.0
            }
            InterfaceKind::Sata => self.sata_gbps * 1e9 * 0.8 / 8.0,
            InterfaceKind::Ufs => self.ufs_lanes as f64 * self.ufs_gbps * 1e9 * 0.8 / 8.0,
        }
    }

    pub fn segment_overhead(&self) -> SimTime {
        SimTime::from_ns_f64(self.per_segment_overhead_ns)
    }

    /// Link occupancy of one DMA segment.
    pub fn segment_time(&self, bytes: u64) -> SimTime {
        crate::time::transfer_time(bytes, self.link_bytes_per_sec()) + self.segment_overhead()
    }

    /// Commands the interface can hold outstanding.
    pub fn max_outstanding(&self) -> usize {
        if self.kind.is_htype() {
            HTYPE_SLOTS
        } else {
            (self.queue_entries as usize - 1) * self.io_queues as usize
        }
    }

    pub fn weight(&self, io_queue_index: usize) -> u32 {
        self.wrr_weights.get(io_queue_index).copied().unwrap_or(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn host_memory_faults_on_unbacked() {
        let mut m = HostMemory::new();
        let a = m.alloc(5000);
        m.write(a + 4000, &[7u8; 200]).unwrap();
        let mut b = [0u8; 200];
        m.read(a + 4000, &mut b).unwrap();
        assert_eq!(b, [7u8; 200]);
        assert_eq!(
            m.read(a + 2 * HOST_PAGE, &mut b),
            Err(ProtocolError::HostFault(a + 2 * HOST_PAGE))
        );
    }

    #[test]
    fn link_rates() {
        let mut c = InterfaceConfig::default();
        assert!((c.link_bytes_per_sec() - 3.938461e9).abs() < 1e4);
        c.kind = InterfaceKind::Sata;
        assert_eq!(c.link_bytes_per_sec(), 600e6);
        c.kind = InterfaceKind::Ufs;
        assert!((c.link_bytes_per_sec() - 1.16608e9).abs() < 1.0);
        c.link_mb_s = Some(4096.0);
        // 4KB at 4.096 GB/s is exactly 1 us plus overhead
        assert_eq!(
            c.segment_time(4096),
            SimTime::from_us(1) + c.segment_overhead()
        );
    }
}
