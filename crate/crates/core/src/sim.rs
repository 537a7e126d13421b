//! Full-system simulation: a host driver issuing a workload through the
//! NVMe, SATA/UFS or open-channel front end into the device, with the
//! whole run driven by one event queue.

use std::collections::{HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::Backend;
use crate::config::{DeviceConfig, ExperimentConfig};
use crate::device::{IoCommand, IoOp, SimFault, Ssd};
use crate::dram::Dram;
use crate::engine::EventQueue;
use crate::flash::{FlashAddress, FlashBackend, FlashTransaction};
use crate::ftl::{Ftl, FtlStats, GcMode, PageAccounting};
use crate::hil::htype::{CommandList, HtypeCommand};
use crate::hil::nvme::{
    opcode, HostQueuePair, NvmeController, ProtocolErrorOrStatus, Status, SubmissionEntry, ADMIN_QID, PSDT_SGL,
};
use crate::hil::ocssd::{encode_chunk_info, pus_per_group, GeometryReport, CHUNK_INFO_BYTES};
use crate::hil::prp::{
    build_prp_with_lists, sgl_pointer, traverse_prdt, traverse_prp, traverse_sgl, write_prdt_entry, PRDT_ENTRY,
};
use crate::hil::{HostMemory, InterfaceKind, ProtocolError, Segment, HOST_PAGE, SECTOR};
use crate::icl::{Icl, PrefetchAction};
use crate::metrics::{summarize, CommandRecord, Counters, Recorder, RunSummary};
use crate::time::SimTime;
use crate::workload::{
    parse_trace, HostFtl, HostIo, HostOp, PayloadKind, Precondition, ReplayMode, Shadow, Synthetic,
    TraceRecord, WorkloadSpec,
};

const ADMIN_ENTRIES: u32 = 64;
pub const IDENTIFY_BYTES: u64 = 4096;

/// Builds the device described by `d`.
pub fn build_ssd(d: &DeviceConfig) -> Result<Ssd, SimFault> {
    let g = d.geometry().clone();
    let flash = FlashBackend::new(g.clone(), d.timing.to_params());
    let ftl = Ftl::new(d.ftl.clone(), &g)?;
    let dram_cfg = d.dram.to_config(&d.energy);
    let dram_bytes = dram_cfg.size_bytes;
    let be = Backend {
        flash,
        ftl,
        dram: Dram::new(dram_cfg),
        fw: d.firmware_latency.clone(),
    };
    let icl = Icl::new(
        d.icl.clone(),
        g.total_planes(),
        g.page_size_bytes,
        g.channels,
        dram_bytes,
    )
    .map_err(SimFault::Other)?;
    Ok(Ssd::new(be, icl, d.interface.clone()))
}

/// One host-level request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HostRequest {
    Io(HostIo),
    Flush,
    /// Open-channel command on packed physical addresses.
    Vector { op: IoOp, ppas: Vec<u64> },
}

/// Where host requests come from.
pub enum Source {
    Synthetic(Synthetic),
    Script(VecDeque<HostRequest>),
    Trace {
        records: Vec<TraceRecord>,
        next: usize,
        timed: bool,
    },
}

impl Source {
    /// Builds the source for `spec`, reading its trace file if it has one.
    pub fn from_spec(spec: &WorkloadSpec, capacity: u64, seed: u64) -> Result<Source, SimFault> {
        match &spec.trace {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| SimFault::Other(format!("{}: {e}", path.display())))?;
                let mut records = parse_trace(&text).map_err(|e| SimFault::Other(format!("{}: {e}", path.display())))?;
                if let Some(n) = spec.total_ops {
                    records.truncate(n as usize);
                }
                Ok(Source::Trace {
                    records,
                    next: 0,
                    timed: spec.replay == ReplayMode::Timed,
                })
            }
            None => Ok(Source::Synthetic(Synthetic::new(spec, capacity, seed))),
        }
    }

    fn is_timed(&self) -> bool {
        matches!(self, Source::Trace { timed: true, .. })
    }

    fn next_request(&mut self) -> Option<HostRequest> {
        match self {
            Source::Synthetic(s) => s.next_io().map(HostRequest::Io),
            Source::Script(q) => q.pop_front(),
            Source::Trace { records, next, .. } => {
                let r = records.get(*next)?;
                *next += 1;
                Some(HostRequest::Io(HostIo {
                    op: r.op,
                    offset: r.lba * SECTOR,
                    len: r.length_bytes,
                }))
            }
        }
    }

    fn next_timestamp(&self) -> Option<SimTime> {
        match self {
            Source::Trace { records, next, .. } => records.get(*next).map(|r| r.timestamp),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ev {
    Fetch,
    /// Device posts the completion of a tagged NVMe command.
    Post(u64),
    /// Interrupt for a completion queue.
    Irq(u16),
    /// Host-controller interrupt service finished for a tagged command.
    HtypeDone(u64),
    Arrival,
    IdleGc(u64),
}

enum Front {
    Nvme {
        ctrl: NvmeController,
        admin: HostQueuePair,
        io: Vec<HostQueuePair>,
        /// Commands on each SQ not yet completed back to the host.
        load: Vec<u32>,
        admin_load: u32,
        next_q: usize,
        tags: HashMap<(u16, u16), u64>,
        next_cid: u16,
    },
    Htype {
        list: CommandList,
    },
}

struct Inflight {
    op: IoOp,
    admin: bool,
    sqe: SubmissionEntry,
    htype: Option<HtypeCommand>,
    /// Host allocations to free on completion: (base, bytes).
    allocs: Vec<(u64, u64)>,
    buf: u64,
    bytes: u64,
    /// First logical sector of the data, for payload checking.
    sector: Option<u64>,
    generation: u64,
    submit: SimTime,
    fetch_start: SimTime,
    fetched: SimTime,
    mid: SimTime,
    fw_done: SimTime,
    status: Status,
    qid: u16,
    slot: usize,
    dw0: u32,
}

/// Result of an admin command kept for the host.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdminResult {
    pub status: Status,
    pub dw0: u32,
    pub data: Vec<u8>,
}

/// Everything a finished run produced.
pub struct SimOutput {
    pub records: Vec<CommandRecord>,
    pub counters: Counters,
    /// FTL activity of the preconditioning phase alone.
    pub precondition: FtlStats,
    pub trace: Vec<String>,
    pub flash_log: Vec<FlashTransaction>,
    pub prefetch_log: Vec<PrefetchAction>,
    pub verify_mismatches: u64,
    pub checked_reads: u64,
    /// Most commands the device held at once.
    pub max_outstanding: usize,
    /// Host commands in flight at each completion, in completion order.
    pub inflight_at_completion: Vec<u32>,
    pub page_accounting: PageAccounting,
    pub identified_sectors: u64,
    /// Open-channel reads served by the host FTL without device I/O.
    pub host_zero_reads: u64,
}

pub struct Simulator {
    pub ssd: Ssd,
    pub mem: HostMemory,
    q: EventQueue<Ev>,
    front: Front,
    fetch_busy: bool,
    inflight: HashMap<u64, Inflight>,
    next_tag: u64,
    /// Prepared commands waiting for room in a device queue.
    waiting: VecDeque<u64>,
    recorder: Recorder,
    shadow: Shadow,
    zero_payload: bool,
    verify: bool,
    generation: u64,
    source: Source,
    source_done: bool,
    queue_depth: u32,
    stop_at: Option<SimTime>,
    outstanding: usize,
    device_outstanding: usize,
    max_outstanding: usize,
    inflight_at_completion: Vec<u32>,
    idle_epoch: u64,
    idle_window: SimTime,
    host_ftl: Option<HostFtl>,
    host_zero_reads: u64,
    run_start: SimTime,
    end: SimTime,
    admin_results: HashMap<u64, AdminResult>,
    identified_sectors: u64,
    precondition: FtlStats,
    seed: u64,
}

fn status_of(e: ProtocolErrorOrStatus) -> Status {
    match e {
        ProtocolErrorOrStatus::Status(s) => s,
        ProtocolErrorOrStatus::Protocol(_) => Status::INTERNAL_ERROR,
    }
}

fn transfer_status(e: ProtocolError) -> Status {
    match e {
        ProtocolError::HostFault(_) => Status::DATA_TRANSFER_ERROR,
        ProtocolError::UnsupportedSgl(_) => Status::SGL_TYPE_INVALID,
        _ => Status::INVALID_FIELD,
    }
}

impl Simulator {
    /// Builds the device and host and brings the interface up: I/O queues
    /// are created and the namespace identified through admin commands.
    pub fn new(device: &DeviceConfig, seed: u64) -> Result<Self, SimFault> {
        let ssd = build_ssd(device)?;
        let mut mem = HostMemory::new();
        let iface = &device.interface;
        let front = if iface.kind.is_htype() {
            Front::Htype {
                list: CommandList::new(),
            }
        } else {
            let admin = HostQueuePair::new(&mut mem, ADMIN_QID, ADMIN_ENTRIES);
            let io = (0..iface.io_queues)
                .map(|i| HostQueuePair::new(&mut mem, i as u16 + 1, iface.queue_entries))
                .collect();
            Front::Nvme {
                ctrl: NvmeController::new(iface.arbitration, admin.sq_base, admin.cq_base, ADMIN_ENTRIES),
                admin,
                io,
                load: vec![0; iface.io_queues as usize],
                admin_load: 0,
                next_q: 0,
                tags: HashMap::new(),
                next_cid: 0,
            }
        };
        let host_ftl = (iface.kind == InterfaceKind::Ocssd).then(|| HostFtl::new(device.geometry()));
        let mut sim = Simulator {
            ssd,
            mem,
            q: EventQueue::new(),
            front,
            fetch_busy: false,
            inflight: HashMap::new(),
            next_tag: 0,
            waiting: VecDeque::new(),
            recorder: Recorder::new(),
            shadow: Shadow::new(seed, PayloadKind::Zero),
            zero_payload: true,
            verify: false,
            generation: 0,
            source: Source::Script(VecDeque::new()),
            source_done: false,
            queue_depth: 1,
            stop_at: None,
            outstanding: 0,
            device_outstanding: 0,
            max_outstanding: 0,
            inflight_at_completion: Vec::new(),
            idle_epoch: 0,
            idle_window: SimTime::from_us(1000),
            host_ftl,
            host_zero_reads: 0,
            run_start: SimTime::ZERO,
            end: SimTime::ZERO,
            admin_results: HashMap::new(),
            identified_sectors: 0,
            precondition: FtlStats::default(),
            seed,
        };
        sim.bring_up()?;
        Ok(sim)
    }

    fn bring_up(&mut self) -> Result<(), SimFault> {
        let Front::Nvme { io, .. } = &self.front else {
            self.identified_sectors = self.ssd.capacity_sectors();
            return Ok(());
        };
        let queues: Vec<(u16, u64, u64, u32)> = io.iter().map(|p| (p.qid, p.sq_base, p.cq_base, p.sq_size)).collect();
        for (i, (qid, sq, cq, size)) in queues.into_iter().enumerate() {
            let weight = self.ssd.iface.weight(i);
            self.submit_admin(opcode::CREATE_CQ, qid as u32 | (size - 1) << 16, 0, 0, Some(cq), 0)?;
            self.submit_admin(
                opcode::CREATE_SQ,
                qid as u32 | (size - 1) << 16,
                (qid as u32) << 16 | 1,
                weight,
                Some(sq),
                0,
            )?;
        }
        self.submit_admin(opcode::IDENTIFY, 1, 0, 0, None, IDENTIFY_BYTES)?;
        let ns = self.submit_admin(opcode::IDENTIFY, 0, 0, 0, None, IDENTIFY_BYTES)?;
        self.drain()?;
        let failed: Vec<_> = self.admin_results.values().filter(|r| !r.status.is_success()).collect();
        if !failed.is_empty() {
            return Err(SimFault::Other(format!("interface bring-up failed: {:?}", failed[0].status)));
        }
        let id = &self.admin_results[&ns].data;
        self.identified_sectors = u64::from_le_bytes(id[0..8].try_into().unwrap());
        Ok(())
    }

    /// Queues an admin command. `base` is passed as PRP1 directly (queue
    /// creation); otherwise a `data_len`-byte buffer is allocated for the
    /// returned data. Returns the command's tag.
    pub fn submit_admin(
        &mut self,
        op: u8,
        cdw10: u32,
        cdw11: u32,
        cdw12: u32,
        base: Option<u64>,
        data_len: u64,
    ) -> Result<u64, SimFault> {
        if !matches!(self.front, Front::Nvme { .. }) {
            return Err(SimFault::Other("admin commands need an NVMe-style interface".into()));
        }
        let mut allocs = Vec::new();
        let (prp1, prp2, buf) = match base {
            Some(b) => (b, 0, 0),
            None if data_len > 0 => {
                let b = self.mem.alloc(data_len);
                allocs.push((b, data_len));
                let (p1, p2, lists) = build_prp_with_lists(&mut self.mem, b, data_len)?;
                allocs.extend(lists.into_iter().map(|l| (l, HOST_PAGE)));
                (p1, p2, b)
            }
            None => (0, 0, 0),
        };
        let sqe = SubmissionEntry {
            opcode: op,
            prp1,
            prp2,
            cdw10,
            cdw11,
            cdw12,
            ..Default::default()
        };
        let tag = self.new_inflight(IoOp::Flush, true, sqe, None, allocs, buf, data_len, None, 0);
        self.admit_or_wait(tag)?;
        Ok(tag)
    }

    pub fn admin_result(&self, tag: u64) -> Option<&AdminResult> {
        self.admin_results.get(&tag)
    }

    /// Exported capacity reported by the namespace identify data.
    pub fn identified_sectors(&self) -> u64 {
        self.identified_sectors
    }

    pub fn now(&self) -> SimTime {
        self.q.now()
    }

    /// Sets the request source and closed-loop depth for [`run`](Self::run).
    pub fn set_source(&mut self, source: Source, queue_depth: u32) {
        self.source = source;
        self.source_done = false;
        self.queue_depth = queue_depth.max(1);
    }

    /// Applies the payload, verification, duration and idle-GC settings of
    /// `spec` and installs its request source.
    pub fn configure(&mut self, spec: &WorkloadSpec) -> Result<(), SimFault> {
        self.shadow = Shadow::new(self.seed, spec.payload);
        self.zero_payload = spec.payload == PayloadKind::Zero;
        self.verify = spec.verify;
        self.idle_window = SimTime::from_us_f64(spec.idle_gc_window_us);
        self.stop_at = spec.duration_us.map(SimTime::from_us_f64);
        let capacity = self.identified_sectors * SECTOR;
        let src = Source::from_spec(spec, capacity, self.seed)?;
        self.set_source(src, spec.queue_depth);
        Ok(())
    }

    /// Brings the FTL to the requested state with flash timing off, then
    /// clears every counter so the run measures only itself.
    pub fn precondition(&mut self, mode: Precondition) -> Result<FtlStats, SimFault> {
        if mode == Precondition::None || self.ssd.is_ocssd() {
            self.ssd.reset_stats();
            return Ok(FtlStats::default());
        }
        let at = self.q.now();
        let be = &mut self.ssd.be;
        be.flash.set_timed(false);
        be.ftl.sequential_fill(&mut be.flash, at)?;
        if mode == Precondition::Stress {
            let n = be.ftl.logical_superpages();
            let slots = be.ftl.slots() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_f111);
            for _ in 0..n {
                let slpn = rng.gen_range(0..n);
                be.ftl.write(&mut be.flash, slpn, vec![None; slots], at)?;
            }
        }
        be.flash.set_timed(true);
        let stats = be.ftl.stats();
        self.ssd.reset_stats();
        self.precondition = stats;
        Ok(stats)
    }

    /// Issues the workload until the source is exhausted and every command
    /// has completed, then writes back the cache.
    pub fn run(&mut self) -> Result<(), SimFault> {
        self.run_start = self.q.now();
        if let Some(d) = self.stop_at {
            self.stop_at = Some(self.run_start + d);
        }
        if self.source.is_timed() {
            self.schedule_arrival();
        } else {
            self.pump()?;
        }
        self.drain()?;
        let now = self.q.now();
        self.end = now;
        if !self.ssd.is_ocssd() {
            self.ssd.retire(now);
            let (_, done) = self.ssd.icl.flush_all(&mut self.ssd.be, now)?;
            self.end = done.max(now);
        }
        Ok(())
    }

    fn drain(&mut self) -> Result<(), SimFault> {
        while let Some(ev) = self.q.advance() {
            self.handle(ev.payload)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> SimOutput {
        let be = &self.ssd.be;
        let counters = Counters {
            flash: be.flash.stats(),
            dram_bursts: be.dram.stats().bursts,
            ftl: be.ftl.stats(),
            icl: self.ssd.icl.stats(),
            hil: self.ssd.stats(),
            erase_counts: be.flash.erase_counts().to_vec(),
            page_bytes: self.ssd.page_bytes(),
            span: self.end.saturating_sub(self.run_start),
        };
        let page_accounting = be.ftl.page_accounting();
        SimOutput {
            records: std::mem::take(&mut self.recorder).into_records(),
            counters,
            precondition: self.precondition,
            trace: self.ssd.take_trace(),
            flash_log: self.ssd.be.flash.take_log(),
            prefetch_log: self.ssd.icl.take_prefetch_log(),
            verify_mismatches: self.shadow.mismatches,
            checked_reads: self.shadow.checked_reads,
            max_outstanding: self.max_outstanding,
            inflight_at_completion: self.inflight_at_completion,
            page_accounting,
            identified_sectors: self.identified_sectors,
            host_zero_reads: self.host_zero_reads,
        }
    }

    fn schedule_arrival(&mut self) {
        if let Some(ts) = self.source.next_timestamp() {
            let at = (self.run_start + ts).max(self.q.now());
            self.q.schedule(at, Ev::Arrival);
        } else {
            self.source_done = true;
        }
    }

    fn stopped(&self) -> bool {
        self.stop_at.is_some_and(|t| self.q.now() >= t)
    }

    /// Closed loop: keeps `queue_depth` host commands in flight.
    fn pump(&mut self) -> Result<(), SimFault> {
        if self.source.is_timed() {
            return Ok(());
        }
        let mut skipped = 0u32;
        while (self.outstanding as u32) < self.queue_depth && !self.source_done {
            if self.stopped() {
                self.source_done = true;
                break;
            }
            match self.source.next_request() {
                Some(r) => {
                    if !self.submit(r)? {
                        skipped += 1;
                        if skipped > 1_000_000 {
                            return Err(SimFault::Other("host FTL skipped every request".into()));
                        }
                    }
                }
                None => self.source_done = true,
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn new_inflight(
        &mut self,
        op: IoOp,
        admin: bool,
        sqe: SubmissionEntry,
        htype: Option<HtypeCommand>,
        allocs: Vec<(u64, u64)>,
        buf: u64,
        bytes: u64,
        sector: Option<u64>,
        generation: u64,
    ) -> u64 {
        let tag = self.next_tag;
        self.next_tag += 1;
        let now = self.q.now();
        self.inflight.insert(
            tag,
            Inflight {
                op,
                admin,
                sqe,
                htype: htype.map(|mut h| {
                    h.tag = tag;
                    h
                }),
                allocs,
                buf,
                bytes,
                sector,
                generation,
                submit: now,
                fetch_start: now,
                fetched: now,
                mid: now,
                fw_done: now,
                status: Status::SUCCESS,
                qid: 0,
                slot: 0,
                dw0: 0,
            },
        );
        tag
    }

    /// Prepares host buffers for `req` and hands it to the interface.
    /// Returns false if the request needed no device command.
    pub fn submit(&mut self, req: HostRequest) -> Result<bool, SimFault> {
        let (req, host_sector) = match (req, self.host_ftl.is_some()) {
            (HostRequest::Io(io), true) => match self.host_ftl_translate(io)? {
                Some(r) => r,
                None => return Ok(false),
            },
            (r, _) => (r, None),
        };
        let (op, bytes, sector) = match &req {
            HostRequest::Io(io) => {
                let op = if io.op == HostOp::Read { IoOp::Read } else { IoOp::Write };
                (op, io.len, Some(io.offset / SECTOR))
            }
            HostRequest::Flush => (IoOp::Flush, 0, None),
            HostRequest::Vector { op, ppas } => {
                let b = if *op == IoOp::VectorReset {
                    0
                } else {
                    ppas.len() as u64 * self.ssd.page_bytes()
                };
                (*op, b, host_sector)
            }
        };
        let mut allocs = Vec::new();
        let buf = if bytes > 0 {
            let b = self.mem.alloc(bytes);
            allocs.push((b, bytes));
            b
        } else {
            0
        };
        let mut generation = 0;
        if op.is_write() {
            self.generation += 1;
            generation = self.generation;
            if let (Some(s), false) = (sector, self.zero_payload) {
                let mut data = vec![0u8; bytes as usize];
                self.shadow.payload(s, generation, &mut data);
                self.mem.write(buf, &data)?;
            }
        }
        let (sqe, htype) = if self.ssd.iface.kind.is_htype() {
            if !matches!(op, IoOp::Read | IoOp::Write) {
                // the host-controller front end carries only reads and writes;
                // a flush is a cache write-back the host waits on
                let HostRequest::Flush = req else {
                    return Err(SimFault::Other("vector commands need an open-channel interface".into()));
                };
            }
            let segs: Vec<Segment> = (0..bytes.div_ceil(HOST_PAGE))
                .map(|i| Segment {
                    addr: buf + i * HOST_PAGE,
                    len: HOST_PAGE.min(bytes - i * HOST_PAGE),
                })
                .collect();
            let table_bytes = (segs.len() as u64 * PRDT_ENTRY).max(PRDT_ENTRY);
            let table = self.mem.alloc(table_bytes);
            allocs.push((table, table_bytes));
            for (i, s) in segs.iter().enumerate() {
                write_prdt_entry(&mut self.mem, table + i as u64 * PRDT_ENTRY, *s)?;
            }
            let (slba, sectors) = match &req {
                HostRequest::Io(io) => (io.offset / SECTOR, (io.len / SECTOR) as u32),
                _ => (0, 0),
            };
            let h = HtypeCommand {
                tag: 0,
                write: op == IoOp::Write,
                slba,
                sectors,
                prdt: table,
                prdt_entries: segs.len() as u32,
            };
            (SubmissionEntry::default(), Some(h))
        } else {
            let sgl = self.ssd.iface.sgl && matches!(req, HostRequest::Io(_));
            let (prp1, prp2, lists) = if sgl {
                let (a, b) = sgl_pointer(buf, bytes as u32);
                (a, b, Vec::new())
            } else if bytes > 0 {
                build_prp_with_lists(&mut self.mem, buf, bytes)?
            } else {
                (0, 0, Vec::new())
            };
            allocs.extend(lists.into_iter().map(|l| (l, HOST_PAGE)));
            let sqe = match &req {
                HostRequest::Io(io) => {
                    let opc = if op == IoOp::Read { opcode::READ } else { opcode::WRITE };
                    let sectors = io.len / SECTOR;
                    if io.len == 0 || io.len % SECTOR != 0 || sectors > 65536 {
                        return Err(SimFault::Other(format!("request length {} not encodable", io.len)));
                    }
                    let mut sqe = SubmissionEntry::io(opc, 0, io.offset / SECTOR, sectors as u32, prp1, prp2);
                    if sgl {
                        sqe.flags |= PSDT_SGL;
                    }
                    sqe
                }
                HostRequest::Flush => SubmissionEntry::flush(0),
                HostRequest::Vector { op, ppas } => {
                    if ppas.is_empty() || ppas.len() > 64 {
                        return Err(SimFault::Other(format!("vector of {} addresses", ppas.len())));
                    }
                    let opc = match op {
                        IoOp::VectorRead => opcode::VECTOR_READ,
                        IoOp::VectorWrite => opcode::VECTOR_WRITE,
                        _ => opcode::VECTOR_RESET,
                    };
                    let list = if ppas.len() == 1 {
                        ppas[0]
                    } else {
                        let l = self.mem.alloc(ppas.len() as u64 * 8);
                        allocs.push((l, ppas.len() as u64 * 8));
                        for (i, p) in ppas.iter().enumerate() {
                            self.mem.write_u64(l + 8 * i as u64, *p)?;
                        }
                        l
                    };
                    SubmissionEntry {
                        opcode: opc,
                        nsid: 1,
                        prp1,
                        prp2,
                        cdw10: list as u32,
                        cdw11: (list >> 32) as u32,
                        cdw12: ppas.len() as u32 - 1,
                        ..Default::default()
                    }
                }
            };
            (sqe, None)
        };
        let tag = self.new_inflight(op, false, sqe, htype, allocs, buf, bytes, sector, generation);
        self.outstanding += 1;
        self.idle_epoch += 1;
        self.admit_or_wait(tag)?;
        Ok(true)
    }

    /// Maps a block request onto the host FTL log. Reads of pages never
    /// written are served as zeros on the host. Also returns the logical
    /// sector the data corresponds to when it is contiguous.
    fn host_ftl_translate(&mut self, io: HostIo) -> Result<Option<(HostRequest, Option<u64>)>, SimFault> {
        let pb = self.ssd.page_bytes();
        if !io.offset.is_multiple_of(pb) || !io.len.is_multiple_of(pb) || io.len == 0 || io.len / pb > 64 {
            return Err(SimFault::Other(format!(
                "open-channel host FTL needs page-aligned requests of 1..=64 pages (got {} bytes at {})",
                io.len, io.offset
            )));
        }
        let g = self.ssd.be.flash.geometry().clone();
        let fmt = self.ssd.ppa_format();
        let hf = self.host_ftl.as_mut().expect("host FTL present");
        let lpns: Vec<u64> = (io.offset / pb..(io.offset + io.len) / pb).collect();
        match io.op {
            HostOp::Write => {
                let addrs = hf
                    .append(&lpns)
                    .ok_or_else(|| SimFault::Other("host FTL log is full".into()))?;
                let req = HostRequest::Vector {
                    op: IoOp::VectorWrite,
                    ppas: addrs.iter().map(|a| fmt.pack(&g, a)).collect(),
                };
                Ok(Some((req, Some(io.offset / SECTOR))))
            }
            HostOp::Read => {
                let addrs: Vec<FlashAddress> = lpns.iter().filter_map(|l| hf.lookup(*l)).collect();
                if addrs.is_empty() {
                    self.host_zero_reads += 1;
                    return Ok(None);
                }
                let whole = addrs.len() == lpns.len();
                let req = HostRequest::Vector {
                    op: IoOp::VectorRead,
                    ppas: addrs.iter().map(|a| fmt.pack(&g, a)).collect(),
                };
                Ok(Some((req, whole.then_some(io.offset / SECTOR))))
            }
        }
    }

    /// Places a prepared command in a device queue, or parks it until one
    /// has room.
    fn admit_or_wait(&mut self, tag: u64) -> Result<(), SimFault> {
        if !self.waiting.is_empty() || !self.try_admit(tag)? {
            self.waiting.push_back(tag);
        }
        Ok(())
    }

    fn admit_waiting(&mut self) -> Result<(), SimFault> {
        while let Some(&tag) = self.waiting.front() {
            if !self.try_admit(tag)? {
                break;
            }
            self.waiting.pop_front();
        }
        Ok(())
    }

    fn try_admit(&mut self, tag: u64) -> Result<bool, SimFault> {
        let inf = self.inflight.get_mut(&tag).expect("tag is live");
        let admin = inf.admin;
        match &mut self.front {
            Front::Htype { list } => {
                let cmd = inf.htype.expect("host-controller command");
                match list.issue(cmd) {
                    Ok(slot) => inf.slot = slot,
                    Err(ProtocolError::QueueFull(_)) => return Ok(false),
                    Err(e) => return Err(e.into()),
                }
            }
            Front::Nvme {
                ctrl,
                admin: aq,
                io,
                load,
                admin_load,
                next_q,
                tags,
                next_cid,
            } => {
                let (qp, slot_load) = if admin {
                    if *admin_load + 1 >= aq.sq_size {
                        return Ok(false);
                    }
                    (aq, admin_load)
                } else {
                    let n = io.len();
                    let Some(i) = (0..n).map(|k| (*next_q + k) % n).find(|&i| load[i] + 1 < io[i].sq_size) else {
                        return Ok(false);
                    };
                    *next_q = (i + 1) % n;
                    (&mut io[i], &mut load[i])
                };
                let mut cid = *next_cid;
                while tags.contains_key(&(qp.qid, cid)) {
                    cid = cid.wrapping_add(1);
                }
                *next_cid = cid.wrapping_add(1);
                inf.sqe.cid = cid;
                inf.qid = qp.qid;
                tags.insert((qp.qid, cid), tag);
                *slot_load += 1;
                let tail = qp.push(&mut self.mem, &inf.sqe)?;
                ctrl.ring_sq(qp.qid, tail)?;
            }
        }
        if !admin {
            self.device_outstanding += 1;
            self.max_outstanding = self.max_outstanding.max(self.device_outstanding);
        }
        if !self.fetch_busy {
            self.fetch_busy = true;
            self.q.schedule(self.q.now(), Ev::Fetch);
        }
        Ok(true)
    }

    fn handle(&mut self, ev: Ev) -> Result<(), SimFault> {
        match ev {
            Ev::Fetch => self.on_fetch(),
            Ev::Post(tag) => self.on_post(tag),
            Ev::Irq(cqid) => self.on_irq(cqid),
            Ev::HtypeDone(tag) => {
                let slot = self.inflight[&tag].slot;
                if let Front::Htype { list } = &mut self.front {
                    list.complete(slot);
                }
                self.finish_command(tag)
            }
            Ev::Arrival => {
                if self.stopped() {
                    self.source_done = true;
                    return Ok(());
                }
                if let Some(r) = self.source.next_request() {
                    self.submit(r)?;
                }
                self.schedule_arrival();
                Ok(())
            }
            Ev::IdleGc(epoch) => {
                if epoch != self.idle_epoch || self.outstanding > 0 {
                    return Ok(());
                }
                let now = self.q.now();
                self.ssd.retire(now);
                let be = &mut self.ssd.be;
                if be.ftl.idle_collect(&mut be.flash, now)?.is_some() {
                    self.q.schedule(now + self.idle_window, Ev::IdleGc(epoch));
                }
                Ok(())
            }
        }
    }

    fn on_fetch(&mut self) -> Result<(), SimFault> {
        let now = self.q.now();
        self.ssd.retire(now);
        let next_free = match &mut self.front {
            Front::Htype { list } => match list.fetch() {
                None => None,
                Some((_, cmd)) => Some(self.fetch_htype(cmd, now)?),
            },
            Front::Nvme { ctrl, tags, .. } => match ctrl.fetch(&self.mem)? {
                None => None,
                Some((qid, sqe)) => {
                    let tag = *tags
                        .get(&(qid, sqe.cid))
                        .ok_or_else(|| SimFault::Other(format!("unknown command id {} on queue {qid}", sqe.cid)))?;
                    Some(self.fetch_nvme(tag, qid, sqe, now)?)
                }
            },
        };
        match next_free {
            Some(t) => {
                self.q.schedule(t, Ev::Fetch);
            }
            None => self.fetch_busy = false,
        }
        Ok(())
    }

    fn fetch_htype(&mut self, cmd: HtypeCommand, now: SimTime) -> Result<SimTime, SimFault> {
        let total = cmd.sectors as u64 * SECTOR;
        let list_pages = (cmd.prdt_entries as u64 * PRDT_ENTRY).div_ceil(HOST_PAGE) as u32;
        let fetched = now + self.ssd.fetch_cost(list_pages);
        let op = self.inflight[&cmd.tag].op;
        self.ssd.trace_line(format!(
            "{} FETCH q=0 cid={} op={:?} slba={} nlb={}",
            now.as_ps(),
            cmd.tag,
            op,
            cmd.slba,
            cmd.sectors
        ));
        let decoded = if op == IoOp::Flush {
            Ok(IoCommand {
                op,
                slba: 0,
                sectors: 0,
                segments: Vec::new(),
                ppas: Vec::new(),
            })
        } else {
            traverse_prdt(&self.mem, cmd.prdt, cmd.prdt_entries, total)
                .map(|segments| IoCommand {
                    op,
                    slba: cmd.slba,
                    sectors: cmd.sectors,
                    segments,
                    ppas: Vec::new(),
                })
                .map_err(transfer_status)
        };
        self.execute_io(cmd.tag, decoded, now, fetched)?;
        let fw_done = self.inflight[&cmd.tag].fw_done;
        let done = self.ssd.completion_time(fw_done);
        self.q.schedule(done, Ev::HtypeDone(cmd.tag));
        Ok(fetched)
    }

    fn fetch_nvme(&mut self, tag: u64, qid: u16, sqe: SubmissionEntry, now: SimTime) -> Result<SimTime, SimFault> {
        self.ssd.trace_line(format!(
            "{} FETCH q={} cid={} op={:#04x} slba={} nlb={}",
            now.as_ps(),
            qid,
            sqe.cid,
            sqe.opcode,
            sqe.slba(),
            sqe.sectors()
        ));
        let cq_post = self.ssd.be.fw.cq_post();
        if qid == ADMIN_QID {
            let fetched = now + self.ssd.fetch_cost(0);
            let (status, dw0, done) = self.admin(&sqe, fetched)?;
            let inf = self.inflight.get_mut(&tag).expect("tag is live");
            inf.fetch_start = now;
            inf.fetched = fetched;
            inf.mid = fetched;
            inf.fw_done = done;
            inf.status = status;
            inf.dw0 = dw0;
            self.q.schedule(done + cq_post, Ev::Post(tag));
            return Ok(fetched);
        }
        let (decoded, list_pages) = self.decode_nvme(&sqe);
        let fetched = now + self.ssd.fetch_cost(list_pages);
        self.execute_io(tag, decoded, now, fetched)?;
        let fw_done = self.inflight[&tag].fw_done;
        self.q.schedule(fw_done + cq_post, Ev::Post(tag));
        Ok(fetched)
    }

    /// Walks the data pointers of an I/O submission entry. Returns the
    /// command (or the status to fail it with) and the list pages read.
    fn decode_nvme(&self, sqe: &SubmissionEntry) -> (Result<IoCommand, Status>, u32) {
        let ocssd = self.ssd.is_ocssd();
        let pb = self.ssd.page_bytes();
        let op = match sqe.opcode {
            opcode::READ if !ocssd => IoOp::Read,
            opcode::WRITE if !ocssd => IoOp::Write,
            opcode::FLUSH => IoOp::Flush,
            opcode::VECTOR_READ if ocssd => IoOp::VectorRead,
            opcode::VECTOR_WRITE if ocssd => IoOp::VectorWrite,
            opcode::VECTOR_RESET if ocssd => IoOp::VectorReset,
            _ => return (Err(Status::INVALID_OPCODE), 0),
        };
        let mut list_pages = 0;
        let mut ppas = Vec::new();
        let (slba, sectors, total) = match op {
            IoOp::Read | IoOp::Write => (sqe.slba(), sqe.sectors(), sqe.sectors() as u64 * SECTOR),
            IoOp::Flush => (0, 0, 0),
            _ => {
                let n = (sqe.cdw12 & 0x3f) as u64 + 1;
                if n == 1 {
                    ppas.push(sqe.slba());
                } else {
                    list_pages = 1;
                    for i in 0..n {
                        match self.mem.read_u64(sqe.slba() + 8 * i) {
                            Ok(p) => ppas.push(p),
                            Err(e) => return (Err(transfer_status(e)), list_pages),
                        }
                    }
                }
                let total = if op == IoOp::VectorReset { 0 } else { n * pb };
                (0, 0, total)
            }
        };
        if op == IoOp::Flush && ocssd {
            // no device-side cache to write back
            ppas.clear();
        }
        if sqe.uses_sgl() {
            return match traverse_sgl(sqe.prp1, sqe.prp2, total) {
                Ok(segments) => (
                    Ok(IoCommand {
                        op,
                        slba,
                        sectors,
                        segments,
                        ppas,
                    }),
                    list_pages,
                ),
                Err(e) => (Err(transfer_status(e)), list_pages),
            };
        }
        match traverse_prp(&self.mem, sqe.prp1, sqe.prp2, total) {
            Ok(w) => {
                list_pages += w.list_pages;
                (
                    Ok(IoCommand {
                        op,
                        slba,
                        sectors,
                        segments: w.segments,
                        ppas,
                    }),
                    list_pages,
                )
            }
            Err(e) => (Err(transfer_status(e)), list_pages),
        }
    }

    /// Runs a decoded command on the device and applies its data effects to
    /// the host-side payload model.
    fn execute_io(
        &mut self,
        tag: u64,
        decoded: Result<IoCommand, Status>,
        fetch_start: SimTime,
        fetched: SimTime,
    ) -> Result<(), SimFault> {
        let (status, mid, fw_done) = match decoded {
            Err(s) => {
                self.ssd.reject();
                (s, fetched, fetched)
            }
            Ok(cmd) if cmd.op == IoOp::Flush && self.ssd.is_ocssd() => {
                (Status::SUCCESS, fetched, fetched + self.ssd.be.fw.hil())
            }
            Ok(cmd) => {
                let e = self.ssd.execute(&mut self.mem, &cmd, fetched)?;
                (e.status, e.mid, e.fw_done)
            }
        };
        let inf = self.inflight.get_mut(&tag).expect("tag is live");
        inf.fetch_start = fetch_start;
        inf.fetched = fetched;
        inf.mid = mid.max(fetched);
        inf.fw_done = fw_done.max(inf.mid);
        inf.status = status;
        if status.is_success() && self.verify {
            if let Some(sector) = inf.sector {
                if inf.op.is_write() {
                    self.shadow.record_write(sector, inf.bytes / SECTOR, inf.generation);
                } else if inf.op.is_read() {
                    let mut data = vec![0u8; inf.bytes as usize];
                    self.mem.read(inf.buf, &mut data)?;
                    self.shadow.check(sector, &data);
                }
            }
        }
        Ok(())
    }

    fn admin(&mut self, sqe: &SubmissionEntry, at: SimTime) -> Result<(Status, u32, SimTime), SimFault> {
        let Front::Nvme { ctrl, .. } = &mut self.front else {
            unreachable!("admin commands only exist on NVMe-style fronts");
        };
        let qid = (sqe.cdw10 & 0xffff) as u16;
        let size = (sqe.cdw10 >> 16) + 1;
        let done = at + self.ssd.be.fw.hil();
        let status = |r: Result<(), ProtocolErrorOrStatus>| match r {
            Ok(()) => Status::SUCCESS,
            Err(e) => status_of(e),
        };
        let data: Vec<u8> = match sqe.opcode {
            opcode::CREATE_CQ => return Ok((status(ctrl.create_cq(qid, sqe.prp1, size)), 0, done)),
            opcode::CREATE_SQ => {
                let cqid = (sqe.cdw11 >> 16) as u16;
                let weight = (sqe.cdw12 & 0xffff).max(1);
                return Ok((status(ctrl.create_sq(qid, sqe.prp1, size, cqid, weight)), 0, done));
            }
            opcode::DELETE_SQ => return Ok((status(ctrl.delete_sq(qid)), 0, done)),
            opcode::DELETE_CQ => return Ok((status(ctrl.delete_cq(qid)), 0, done)),
            opcode::NS_ATTACH => return Ok((Status::SUCCESS, 0, done)),
            opcode::IDENTIFY => match sqe.cdw10 & 0xff {
                0 => self.identify_namespace(),
                1 => identify_controller(),
                _ => return Ok((Status::INVALID_FIELD, 0, done)),
            },
            opcode::GEOMETRY if self.ssd.is_ocssd() => {
                let r = GeometryReport::new(self.ssd.be.flash.geometry(), self.ssd.be.flash.timing());
                let mut d = vec![0u8; IDENTIFY_BYTES as usize];
                d[..r.encode().len()].copy_from_slice(&r.encode());
                d
            }
            opcode::GET_LOG_PAGE if self.ssd.is_ocssd() && sqe.cdw10 & 0xff == 0xca => {
                let len = ((sqe.cdw10 >> 16) as u64 + 1) * 4;
                let offset = sqe.cdw12 as u64 | (sqe.cdw13 as u64) << 32;
                let all = self.chunk_report();
                let mut d = vec![0u8; len as usize];
                let start = (offset as usize).min(all.len());
                let n = (all.len() - start).min(d.len());
                d[..n].copy_from_slice(&all[start..start + n]);
                d
            }
            _ => return Ok((Status::INVALID_OPCODE, 0, done)),
        };
        let segs = match traverse_prp(&self.mem, sqe.prp1, sqe.prp2, data.len() as u64) {
            Ok(w) => w.segments,
            Err(e) => return Ok((transfer_status(e), 0, done)),
        };
        match self.ssd.control_transfer(&mut self.mem, &segs, &data, done) {
            Ok(t) => Ok((Status::SUCCESS, 0, t)),
            Err(e) => Ok((transfer_status(e), 0, done)),
        }
    }

    fn identify_namespace(&self) -> Vec<u8> {
        let mut d = vec![0u8; IDENTIFY_BYTES as usize];
        let n = self.ssd.capacity_sectors();
        for off in [0, 8, 16] {
            d[off..off + 8].copy_from_slice(&n.to_le_bytes());
        }
        // one LBA format: 512-byte sectors
        d[130] = 9;
        d
    }

    /// Chunk-information log: one record per chunk in (group, parallel
    /// unit, chunk) order.
    fn chunk_report(&self) -> Vec<u8> {
        let flash = &self.ssd.be.flash;
        let g = flash.geometry();
        let fmt = self.ssd.ppa_format();
        let mut out = Vec::with_capacity(g.total_blocks() as usize * CHUNK_INFO_BYTES);
        let pus = pus_per_group(g);
        for channel in 0..g.channels {
            for pu in 0..pus {
                for block in 0..g.blocks_per_plane {
                    let a = FlashAddress {
                        channel,
                        way: pu / g.planes_per_die / g.dies_per_package,
                        die: pu / g.planes_per_die % g.dies_per_package,
                        plane: pu % g.planes_per_die,
                        block,
                        page: 0,
                    };
                    out.extend_from_slice(&encode_chunk_info(
                        flash.erase_count(&a),
                        flash.write_pointer(&a),
                        fmt.pack(g, &a),
                    ));
                }
            }
        }
        out
    }

    fn on_post(&mut self, tag: u64) -> Result<(), SimFault> {
        let now = self.q.now();
        let inf = &self.inflight[&tag];
        let (qid, cid, status, dw0) = (inf.qid, inf.sqe.cid, inf.status, inf.dw0);
        let Front::Nvme { ctrl, .. } = &mut self.front else {
            unreachable!("completion posts only exist on NVMe-style fronts");
        };
        let posted = ctrl.complete(&mut self.mem, qid, cid, status, dw0)?;
        let cqid = ctrl.cq_of(qid).ok_or(ProtocolError::NoQueue(qid))?;
        self.ssd.trace_line(format!(
            "{} CQE q={} cid={} status={:#x} phase={}",
            now.as_ps(),
            qid,
            cid,
            (status.sct as u16) << 8 | status.sc as u16,
            if posted { "posted" } else { "deferred" }
        ));
        if posted {
            self.q.schedule(now + self.ssd.be.fw.msi(), Ev::Irq(cqid));
        }
        Ok(())
    }

    fn on_irq(&mut self, cqid: u16) -> Result<(), SimFault> {
        let now = self.q.now();
        let Front::Nvme {
            ctrl, admin, io, tags, ..
        } = &mut self.front
        else {
            unreachable!("interrupts per CQ only exist on NVMe-style fronts");
        };
        let qp = if cqid == ADMIN_QID {
            admin
        } else {
            io.iter_mut()
                .find(|p| p.qid == cqid)
                .ok_or(ProtocolError::NoQueue(cqid))?
        };
        let entries = qp.poll(&self.mem)?;
        if entries.is_empty() {
            return Ok(());
        }
        let posted = ctrl.ring_cq(&mut self.mem, cqid, qp.cq_head)?;
        if posted > 0 {
            self.q.schedule(now + self.ssd.be.fw.msi(), Ev::Irq(cqid));
        }
        let mut done = Vec::with_capacity(entries.len());
        for e in entries {
            let tag = tags
                .remove(&(e.sq_id, e.cid))
                .ok_or_else(|| SimFault::Other(format!("completion for unknown cid {} on queue {}", e.cid, e.sq_id)))?;
            done.push((tag, e.status, e.dw0));
        }
        for (tag, status, dw0) in done {
            let inf = self.inflight.get_mut(&tag).expect("tag is live");
            inf.status = status;
            inf.dw0 = dw0;
            if let Front::Nvme { load, admin_load, .. } = &mut self.front {
                if inf.qid == ADMIN_QID {
                    *admin_load -= 1;
                } else {
                    load[inf.qid as usize - 1] -= 1;
                }
            }
            self.finish_command(tag)?;
        }
        Ok(())
    }

    fn finish_command(&mut self, tag: u64) -> Result<(), SimFault> {
        let now = self.q.now();
        let inf = self.inflight.remove(&tag).expect("tag is live");
        if inf.admin {
            let mut data = vec![0u8; if inf.buf != 0 { inf.bytes as usize } else { 0 }];
            if !data.is_empty() {
                self.mem.read(inf.buf, &mut data)?;
            }
            self.admin_results.insert(
                tag,
                AdminResult {
                    status: inf.status,
                    dw0: inf.dw0,
                    data,
                },
            );
        } else {
            self.recorder
                .record(CommandRecord {
                    id: tag,
                    op: inf.op,
                    bytes: inf.bytes,
                    ok: inf.status.is_success(),
                    submit: inf.submit,
                    fetch_start: inf.fetch_start,
                    fetched: inf.fetched,
                    mid: inf.mid,
                    fw_done: inf.fw_done,
                    complete: now,
                })
                .map_err(|e| SimFault::Other(e.to_string()))?;
            self.inflight_at_completion.push(self.outstanding as u32);
            self.outstanding -= 1;
            self.device_outstanding -= 1;
        }
        for (base, bytes) in inf.allocs {
            self.mem.free(base, bytes);
        }
        self.admit_waiting()?;
        self.pump()?;
        if self.outstanding == 0
            && !self.source_done
            && self.ssd.be.ftl.config().gc_mode == GcMode::Background
        {
            self.q.schedule(now + self.idle_window, Ev::IdleGc(self.idle_epoch));
        }
        Ok(())
    }
}

fn identify_controller() -> Vec<u8> {
    let mut d = vec![b' '; 64];
    d[0..4].fill(0);
    d[4..14].copy_from_slice(b"SSDSIM0001");
    d[24..30].copy_from_slice(b"ssdsim");
    d.resize(IDENTIFY_BYTES as usize, 0);
    d[512] = 0x66;
    d[513] = 0x44;
    d[516..520].copy_from_slice(&1u32.to_le_bytes());
    d
}

/// Outcome of one configured run.
pub struct RunResult {
    pub output: SimOutput,
    pub summary: RunSummary,
    pub ramp_up: usize,
}

/// Builds, preconditions and runs one experiment point.
pub fn run_experiment(cfg: &ExperimentConfig, transaction_log: bool) -> Result<RunResult, SimFault> {
    let mut sim = Simulator::new(cfg.device(), cfg.seed)?;
    let spec = cfg.workload();
    sim.configure(spec)?;
    sim.precondition(spec.precondition)?;
    if transaction_log {
        sim.ssd.be.flash.enable_log();
    }
    sim.run()?;
    let output = sim.finish();
    let n = output.records.len() as u64;
    let ramp_up = spec.ramp_up(n) as usize;
    let summary = summarize(&output.records, ramp_up, &output.counters, &cfg.device().energy);
    Ok(RunResult {
        output,
        summary,
        ramp_up,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hil::ocssd::GEOMETRY_BYTES;

    fn tiny(kind: InterfaceKind) -> DeviceConfig {
        let mut d = ExperimentConfig::preset("tiny").unwrap().device().clone();
        d.interface.kind = kind;
        d
    }

    fn io(op: HostOp, offset: u64, len: u64) -> HostRequest {
        HostRequest::Io(HostIo { op, offset, len })
    }

    fn verifying(sim: &mut Simulator) {
        let spec = WorkloadSpec {
            payload: PayloadKind::Pattern,
            verify: true,
            ..WorkloadSpec::default()
        };
        sim.configure(&spec).unwrap();
    }

    #[test]
    fn bring_up_identifies_exported_capacity() {
        let sim = Simulator::new(&tiny(InterfaceKind::Nvme), 1).unwrap();
        assert_eq!(sim.identified_sectors(), sim.ssd.capacity_sectors());
        assert!(sim.now() > SimTime::ZERO);
    }

    #[test]
    fn written_data_reads_back_on_every_block_interface() {
        for kind in [InterfaceKind::Nvme, InterfaceKind::Sata, InterfaceKind::Ufs, InterfaceKind::Ocssd] {
            let mut sim = Simulator::new(&tiny(kind), 3).unwrap();
            verifying(&mut sim);
            let script: VecDeque<_> = [
                io(HostOp::Write, 0, 16384),
                io(HostOp::Write, 65536, 8192),
                io(HostOp::Read, 0, 16384),
                io(HostOp::Write, 4096, 4096),
                io(HostOp::Read, 0, 16384),
                io(HostOp::Read, 65536, 8192),
            ]
            .into();
            sim.set_source(Source::Script(script), 1);
            sim.run().unwrap();
            let out = sim.finish();
            assert_eq!(out.records.len(), 6, "{kind:?}");
            assert!(out.records.iter().all(|r| r.ok), "{kind:?}");
            assert_eq!(out.checked_reads, 3, "{kind:?}");
            assert_eq!(out.verify_mismatches, 0, "{kind:?}");
        }
    }

    #[test]
    fn sub_page_writes_merge_with_old_data() {
        let mut sim = Simulator::new(&tiny(InterfaceKind::Nvme), 5).unwrap();
        verifying(&mut sim);
        let script: VecDeque<_> = [
            io(HostOp::Write, 0, 8192),
            io(HostOp::Write, 1024, 1536),
            io(HostOp::Read, 0, 8192),
            io(HostOp::Read, 512, 512),
        ]
        .into();
        sim.set_source(Source::Script(script), 2);
        sim.run().unwrap();
        let out = sim.finish();
        assert_eq!(out.checked_reads, 2);
        assert_eq!(out.verify_mismatches, 0);
    }

    #[test]
    fn queue_depth_one_alternates_submit_and_complete() {
        let mut sim = Simulator::new(&tiny(InterfaceKind::Nvme), 1).unwrap();
        let spec = WorkloadSpec {
            total_ops: Some(50),
            ..WorkloadSpec::default()
        };
        sim.configure(&spec).unwrap();
        sim.run().unwrap();
        let out = sim.finish();
        assert_eq!(out.records.len(), 50);
        for w in out.records.windows(2) {
            assert!(w[1].submit >= w[0].complete);
        }
        assert_eq!(out.max_outstanding, 1);
    }

    #[test]
    fn out_of_range_and_bad_opcodes_fail_the_command() {
        let mut sim = Simulator::new(&tiny(InterfaceKind::Nvme), 1).unwrap();
        let cap = sim.identified_sectors() * SECTOR;
        let script: VecDeque<_> = [io(HostOp::Read, cap - 4096, 8192), io(HostOp::Read, 0, 4096)].into();
        sim.set_source(Source::Script(script), 1);
        sim.run().unwrap();
        let out = sim.finish();
        assert!(!out.records[0].ok);
        assert!(out.records[1].ok);
        assert_eq!(out.counters.hil.errors, 1);

        // block commands are not part of the open-channel command set
        let mut sim = Simulator::new(&tiny(InterfaceKind::Ocssd), 1).unwrap();
        sim.host_ftl = None;
        sim.set_source(Source::Script([io(HostOp::Read, 0, 4096)].into()), 1);
        sim.run().unwrap();
        assert!(!sim.finish().records[0].ok);
    }

    #[test]
    fn geometry_command_only_on_open_channel() {
        let mut sim = Simulator::new(&tiny(InterfaceKind::Nvme), 1).unwrap();
        let t = sim.submit_admin(opcode::GEOMETRY, 0, 0, 0, None, IDENTIFY_BYTES).unwrap();
        sim.drain().unwrap();
        assert_eq!(sim.admin_result(t).unwrap().status, Status::INVALID_OPCODE);

        let d = tiny(InterfaceKind::Ocssd);
        let mut sim = Simulator::new(&d, 1).unwrap();
        let t = sim.submit_admin(opcode::GEOMETRY, 0, 0, 0, None, IDENTIFY_BYTES).unwrap();
        sim.drain().unwrap();
        let r = sim.admin_result(t).unwrap();
        assert!(r.status.is_success());
        let rep = GeometryReport::decode(r.data[..GEOMETRY_BYTES].try_into().unwrap());
        assert_eq!(rep.chunks_per_pu, d.geometry().blocks_per_plane);
        assert_eq!(rep.pages_per_chunk, d.geometry().pages_per_block);
    }

    #[test]
    fn hil_byte_accounting_matches_dma() {
        for kind in [InterfaceKind::Nvme, InterfaceKind::Sata] {
            let mut sim = Simulator::new(&tiny(kind), 2).unwrap();
            let spec = WorkloadSpec {
                pattern: crate::workload::Pattern::Mixed,
                block_bytes: 12288,
                queue_depth: 4,
                total_ops: Some(200),
                ..WorkloadSpec::default()
            };
            sim.configure(&spec).unwrap();
            sim.run().unwrap();
            let h = sim.finish().counters.hil;
            assert_eq!(h.read_bytes + h.write_bytes, h.dma_bytes);
        }
    }
}
