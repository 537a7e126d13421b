//! NVMe submission/completion entries, queue rings, doorbells and the
//! device-side controller state.

use std::collections::{BTreeMap, VecDeque};

use super::{Arbiter, Arbitration, HostMemory, ProtocolError};

pub const SQE_BYTES: u64 = 64;
pub const CQE_BYTES: u64 = 16;
pub const ADMIN_QID: u16 = 0;

pub mod opcode {
    pub const DELETE_SQ: u8 = 0x00;
    pub const CREATE_SQ: u8 = 0x01;
    pub const GET_LOG_PAGE: u8 = 0x02;
    pub const DELETE_CQ: u8 = 0x04;
    pub const CREATE_CQ: u8 = 0x05;
    pub const IDENTIFY: u8 = 0x06;
    pub const NS_ATTACH: u8 = 0x15;
    /// Open-channel geometry (admin).
    pub const GEOMETRY: u8 = 0xe2;

    pub const FLUSH: u8 = 0x00;
    pub const WRITE: u8 = 0x01;
    pub const READ: u8 = 0x02;
    pub const VECTOR_RESET: u8 = 0x90;
    pub const VECTOR_WRITE: u8 = 0x91;
    pub const VECTOR_READ: u8 = 0x92;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Status {
    /// Status code type.
    pub sct: u8,
    pub sc: u8,
}

impl Status {
    pub const SUCCESS: Status = Status { sct: 0, sc: 0 };
    pub const INVALID_OPCODE: Status = Status { sct: 0, sc: 0x01 };
    pub const INVALID_FIELD: Status = Status { sct: 0, sc: 0x02 };
    pub const DATA_TRANSFER_ERROR: Status = Status { sct: 0, sc: 0x04 };
    pub const INTERNAL_ERROR: Status = Status { sct: 0, sc: 0x06 };
    pub const SGL_TYPE_INVALID: Status = Status { sct: 0, sc: 0x11 };
    pub const LBA_OUT_OF_RANGE: Status = Status { sct: 0, sc: 0x80 };
    pub const INVALID_QUEUE_ID: Status = Status { sct: 1, sc: 0x01 };
    pub const INVALID_QUEUE_SIZE: Status = Status { sct: 1, sc: 0x02 };
    pub const WRITE_FAULT: Status = Status { sct: 2, sc: 0x80 };
    pub const UNRECOVERED_READ: Status = Status { sct: 2, sc: 0x81 };

    pub fn is_success(self) -> bool {
        self == Status::SUCCESS
    }

    fn to_field(self) -> u16 {
        ((self.sc as u16) << 1) | (((self.sct & 0x7) as u16) << 9)
    }

    fn from_field(f: u16) -> Status {
        Status {
            sc: ((f >> 1) & 0xff) as u8,
            sct: ((f >> 9) & 0x7) as u8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SubmissionEntry {
    pub opcode: u8,
    pub flags: u8,
    pub cid: u16,
    pub nsid: u32,
    pub mptr: u64,
    pub prp1: u64,
    pub prp2: u64,
    pub cdw10: u32,
    pub cdw11: u32,
    pub cdw12: u32,
    pub cdw13: u32,
    pub cdw14: u32,
    pub cdw15: u32,
}

/// PSDT value in the flags byte selecting an SGL data pointer.
pub const PSDT_SGL: u8 = 0x40;

impl SubmissionEntry {
    /// Whether the data pointer holds an SGL rather than PRPs.
    pub fn uses_sgl(&self) -> bool {
        self.flags & 0xc0 != 0
    }

    /// Read or write of `sectors` 512-byte sectors starting at `slba`.
    pub fn io(opcode: u8, cid: u16, slba: u64, sectors: u32, prp1: u64, prp2: u64) -> Self {
        assert!((1..=65536).contains(&sectors), "sector count {sectors} out of range");
        SubmissionEntry {
            opcode,
            cid,
            nsid: 1,
            prp1,
            prp2,
            cdw10: slba as u32,
            cdw11: (slba >> 32) as u32,
            cdw12: sectors - 1,
            ..Default::default()
        }
    }

    pub fn flush(cid: u16) -> Self {
        SubmissionEntry {
            opcode: opcode::FLUSH,
            cid,
            nsid: 1,
            ..Default::default()
        }
    }

    pub fn slba(&self) -> u64 {
        self.cdw10 as u64 | (self.cdw11 as u64) << 32
    }

    /// Sectors covered (the on-wire field is zero-based).
    pub fn sectors(&self) -> u32 {
        (self.cdw12 & 0xffff) + 1
    }

    pub fn encode(&self) -> [u8; SQE_BYTES as usize] {
        let mut b = [0u8; SQE_BYTES as usize];
        b[0] = self.opcode;
        b[1] = self.flags;
        b[2..4].copy_from_slice(&self.cid.to_le_bytes());
        b[4..8].copy_from_slice(&self.nsid.to_le_bytes());
        b[16..24].copy_from_slice(&self.mptr.to_le_bytes());
        b[24..32].copy_from_slice(&self.prp1.to_le_bytes());
        b[32..40].copy_from_slice(&self.prp2.to_le_bytes());
        for (i, v) in [
            self.cdw10, self.cdw11, self.cdw12, self.cdw13, self.cdw14, self.cdw15,
        ]
        .iter()
        .enumerate()
        {
            b[40 + 4 * i..44 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn decode(b: &[u8; SQE_BYTES as usize]) -> Self {
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        SubmissionEntry {
            opcode: b[0],
            flags: b[1],
            cid: u16::from_le_bytes([b[2], b[3]]),
            nsid: u32_at(4),
            mptr: u64_at(16),
            prp1: u64_at(24),
            prp2: u64_at(32),
            cdw10: u32_at(40),
            cdw11: u32_at(44),
            cdw12: u32_at(48),
            cdw13: u32_at(52),
            cdw14: u32_at(56),
            cdw15: u32_at(60),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompletionEntry {
    pub dw0: u32,
    pub sq_head: u16,
    pub sq_id: u16,
    pub cid: u16,
    pub status: Status,
    pub phase: bool,
}

impl CompletionEntry {
    pub fn encode(&self) -> [u8; CQE_BYTES as usize] {
        let mut b = [0u8; CQE_BYTES as usize];
        b[0..4].copy_from_slice(&self.dw0.to_le_bytes());
        b[8..10].copy_from_slice(&self.sq_head.to_le_bytes());
        b[10..12].copy_from_slice(&self.sq_id.to_le_bytes());
        b[12..14].copy_from_slice(&self.cid.to_le_bytes());
        let sf = self.status.to_field() | self.phase as u16;
        b[14..16].copy_from_slice(&sf.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8; CQE_BYTES as usize]) -> Self {
        let sf = u16::from_le_bytes([b[14], b[15]]);
        CompletionEntry {
            dw0: u32::from_le_bytes(b[0..4].try_into().unwrap()),
            sq_head: u16::from_le_bytes([b[8], b[9]]),
            sq_id: u16::from_le_bytes([b[10], b[11]]),
            cid: u16::from_le_bytes([b[12], b[13]]),
            status: Status::from_field(sf),
            phase: sf & 1 == 1,
        }
    }
}

/// Device view of a submission ring.
#[derive(Clone, Debug)]
pub struct SubmissionQueue {
    pub qid: u16,
    pub base: u64,
    pub size: u32,
    pub head: u32,
    pub tail: u32,
    pub cqid: u16,
}

impl SubmissionQueue {
    pub fn pending(&self) -> u32 {
        (self.tail + self.size - self.head) % self.size
    }

    /// Applies a tail doorbell write and returns how many entries it published.
    pub fn ring(&mut self, new_tail: u32) -> Result<u32, ProtocolError> {
        if new_tail >= self.size {
            return Err(ProtocolError::Doorbell {
                qid: self.qid,
                value: new_tail,
                reason: "beyond queue size",
            });
        }
        let added = (new_tail + self.size - self.tail) % self.size;
        if self.pending() + added > self.size - 1 {
            return Err(ProtocolError::Doorbell {
                qid: self.qid,
                value: new_tail,
                reason: "tail overran head",
            });
        }
        self.tail = new_tail;
        Ok(added)
    }

    /// Address of the next entry to fetch; advances the head.
    pub fn pop(&mut self) -> Option<u64> {
        if self.pending() == 0 {
            return None;
        }
        let a = self.base + self.head as u64 * SQE_BYTES;
        self.head = (self.head + 1) % self.size;
        Some(a)
    }
}

/// Device view of a completion ring.
#[derive(Clone, Debug)]
pub struct CompletionQueue {
    pub qid: u16,
    pub base: u64,
    pub size: u32,
    pub head: u32,
    pub tail: u32,
    pub phase: bool,
}

impl CompletionQueue {
    pub fn is_full(&self) -> bool {
        (self.tail + 1) % self.size == self.head
    }

    pub fn post(&mut self, mem: &mut HostMemory, mut e: CompletionEntry) -> Result<(), ProtocolError> {
        debug_assert!(!self.is_full());
        e.phase = self.phase;
        mem.write(self.base + self.tail as u64 * CQE_BYTES, &e.encode())?;
        self.tail += 1;
        if self.tail == self.size {
            self.tail = 0;
            self.phase = !self.phase;
        }
        Ok(())
    }

    pub fn ring_head(&mut self, new_head: u32) -> Result<(), ProtocolError> {
        let outstanding = (self.tail + self.size - self.head) % self.size;
        let consumed = (new_head + self.size - self.head) % self.size;
        if new_head >= self.size || consumed > outstanding {
            return Err(ProtocolError::Doorbell {
                qid: self.qid,
                value: new_head,
                reason: "head beyond posted entries",
            });
        }
        self.head = new_head;
        Ok(())
    }
}

/// Device-side NVMe controller: queues, doorbells and fetch arbitration.
pub struct NvmeController {
    sqs: BTreeMap<u16, SubmissionQueue>,
    cqs: BTreeMap<u16, CompletionQueue>,
    arbiter: Arbiter,
    admin_pending: u32,
    /// Completions waiting for room in a full CQ.
    backlog: BTreeMap<u16, VecDeque<CompletionEntry>>,
}

impl NvmeController {
    /// Controller with an admin queue pair at the given host addresses.
    pub fn new(arbitration: Arbitration, asq: u64, acq: u64, admin_entries: u32) -> Self {
        let mut c = NvmeController {
            sqs: BTreeMap::new(),
            cqs: BTreeMap::new(),
            arbiter: Arbiter::new(arbitration),
            admin_pending: 0,
            backlog: BTreeMap::new(),
        };
        c.cqs.insert(
            ADMIN_QID,
            CompletionQueue {
                qid: ADMIN_QID,
                base: acq,
                size: admin_entries,
                head: 0,
                tail: 0,
                phase: true,
            },
        );
        c.sqs.insert(
            ADMIN_QID,
            SubmissionQueue {
                qid: ADMIN_QID,
                base: asq,
                size: admin_entries,
                head: 0,
                tail: 0,
                cqid: ADMIN_QID,
            },
        );
        c
    }

    pub fn create_cq(&mut self, qid: u16, base: u64, size: u32) -> Result<(), ProtocolErrorOrStatus> {
        if qid == ADMIN_QID || self.cqs.contains_key(&qid) {
            return Err(Status::INVALID_QUEUE_ID.into());
        }
        if !(2..=65536).contains(&size) {
            return Err(Status::INVALID_QUEUE_SIZE.into());
        }
        self.cqs.insert(
            qid,
            CompletionQueue {
                qid,
                base,
                size,
                head: 0,
                tail: 0,
                phase: true,
            },
        );
        Ok(())
    }

    pub fn create_sq(&mut self, qid: u16, base: u64, size: u32, cqid: u16, weight: u32) -> Result<(), ProtocolErrorOrStatus> {
        if qid == ADMIN_QID || self.sqs.contains_key(&qid) || !self.cqs.contains_key(&cqid) {
            return Err(Status::INVALID_QUEUE_ID.into());
        }
        if !(2..=65536).contains(&size) {
            return Err(Status::INVALID_QUEUE_SIZE.into());
        }
        self.sqs.insert(
            qid,
            SubmissionQueue {
                qid,
                base,
                size,
                head: 0,
                tail: 0,
                cqid,
            },
        );
        self.arbiter.add_queue(qid, weight);
        Ok(())
    }

    pub fn delete_sq(&mut self, qid: u16) -> Result<(), ProtocolErrorOrStatus> {
        if qid == ADMIN_QID || self.sqs.remove(&qid).is_none() {
            return Err(Status::INVALID_QUEUE_ID.into());
        }
        self.arbiter.remove_queue(qid);
        Ok(())
    }

    pub fn delete_cq(&mut self, qid: u16) -> Result<(), ProtocolErrorOrStatus> {
        if qid == ADMIN_QID || self.sqs.values().any(|s| s.cqid == qid) {
            return Err(Status::INVALID_QUEUE_ID.into());
        }
        self.cqs
            .remove(&qid)
            .map(|_| ())
            .ok_or(Status::INVALID_QUEUE_ID.into())
    }

    pub fn sq(&self, qid: u16) -> Option<&SubmissionQueue> {
        self.sqs.get(&qid)
    }

    pub fn cq(&self, qid: u16) -> Option<&CompletionQueue> {
        self.cqs.get(&qid)
    }

    /// SQ tail doorbell; returns the number of newly published entries.
    pub fn ring_sq(&mut self, qid: u16, tail: u32) -> Result<u32, ProtocolError> {
        let sq = self.sqs.get_mut(&qid).ok_or(ProtocolError::NoQueue(qid))?;
        let n = sq.ring(tail)?;
        if qid == ADMIN_QID {
            self.admin_pending += n;
        } else {
            self.arbiter.publish(qid, n as u64);
        }
        Ok(n)
    }

    /// CQ head doorbell; posts any backlogged completions that now fit.
    pub fn ring_cq(&mut self, mem: &mut HostMemory, qid: u16, head: u32) -> Result<u32, ProtocolError> {
        let cq = self.cqs.get_mut(&qid).ok_or(ProtocolError::NoQueue(qid))?;
        cq.ring_head(head)?;
        let mut posted = 0;
        if let Some(q) = self.backlog.get_mut(&qid) {
            while !cq.is_full() {
                let Some(e) = q.pop_front() else { break };
                cq.post(mem, e)?;
                posted += 1;
            }
        }
        Ok(posted)
    }

    pub fn has_pending(&self) -> bool {
        self.admin_pending > 0 || self.arbiter.pending() > 0
    }

    /// Fetches the next entry: admin commands first, then I/O queues by the
    /// arbitration policy.
    pub fn fetch(&mut self, mem: &HostMemory) -> Result<Option<(u16, SubmissionEntry)>, ProtocolError> {
        let qid = if self.admin_pending > 0 {
            self.admin_pending -= 1;
            ADMIN_QID
        } else {
            match self.arbiter.next() {
                Some(q) => q,
                None => return Ok(None),
            }
        };
        let sq = self.sqs.get_mut(&qid).ok_or(ProtocolError::NoQueue(qid))?;
        let addr = sq.pop().expect("arbiter and ring agree on pending entries");
        let mut b = [0u8; SQE_BYTES as usize];
        mem.read(addr, &mut b)?;
        Ok(Some((qid, SubmissionEntry::decode(&b))))
    }

    /// Writes a completion for a command fetched from `sqid`. Returns false
    /// when the CQ was full and the entry was queued internally.
    pub fn complete(
        &mut self,
        mem: &mut HostMemory,
        sqid: u16,
        cid: u16,
        status: Status,
        dw0: u32,
    ) -> Result<bool, ProtocolError> {
        let sq = self.sqs.get(&sqid).ok_or(ProtocolError::NoQueue(sqid))?;
        let e = CompletionEntry {
            dw0,
            sq_head: sq.head as u16,
            sq_id: sqid,
            cid,
            status,
            phase: false,
        };
        let cqid = sq.cqid;
        let cq = self.cqs.get_mut(&cqid).ok_or(ProtocolError::NoQueue(cqid))?;
        let backlog = self.backlog.entry(cqid).or_default();
        if cq.is_full() || !backlog.is_empty() {
            backlog.push_back(e);
            return Ok(false);
        }
        cq.post(mem, e)?;
        Ok(true)
    }

    pub fn cq_of(&self, sqid: u16) -> Option<u16> {
        self.sqs.get(&sqid).map(|s| s.cqid)
    }
}

/// Either a protocol fault or an NVMe status to report in the CQE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolErrorOrStatus {
    Protocol(ProtocolError),
    Status(Status),
}

impl From<Status> for ProtocolErrorOrStatus {
    fn from(s: Status) -> Self {
        ProtocolErrorOrStatus::Status(s)
    }
}

impl From<ProtocolError> for ProtocolErrorOrStatus {
    fn from(e: ProtocolError) -> Self {
        ProtocolErrorOrStatus::Protocol(e)
    }
}

/// Host driver view of one queue pair.
#[derive(Clone, Debug)]
pub struct HostQueuePair {
    pub qid: u16,
    pub sq_base: u64,
    pub sq_size: u32,
    pub sq_tail: u32,
    pub cq_base: u64,
    pub cq_size: u32,
    pub cq_head: u32,
    pub phase: bool,
}

impl HostQueuePair {
    pub fn new(mem: &mut HostMemory, qid: u16, entries: u32) -> Self {
        HostQueuePair {
            qid,
            sq_base: mem.alloc(entries as u64 * SQE_BYTES),
            sq_size: entries,
            sq_tail: 0,
            cq_base: mem.alloc(entries as u64 * CQE_BYTES),
            cq_size: entries,
            cq_head: 0,
            phase: true,
        }
    }

    /// Copies `e` into the next SQ slot and returns the new tail value for
    /// the doorbell.
    pub fn push(&mut self, mem: &mut HostMemory, e: &SubmissionEntry) -> Result<u32, ProtocolError> {
        mem.write(self.sq_base + self.sq_tail as u64 * SQE_BYTES, &e.encode())?;
        self.sq_tail = (self.sq_tail + 1) % self.sq_size;
        Ok(self.sq_tail)
    }

    /// Consumes every new completion, detected purely by the phase tag.
    pub fn poll(&mut self, mem: &HostMemory) -> Result<Vec<CompletionEntry>, ProtocolError> {
        let mut out = Vec::new();
        loop {
            let mut b = [0u8; CQE_BYTES as usize];
            mem.read(self.cq_base + self.cq_head as u64 * CQE_BYTES, &mut b)?;
            let e = CompletionEntry::decode(&b);
            if e.phase != self.phase {
                return Ok(out);
            }
            out.push(e);
            self.cq_head += 1;
            if self.cq_head == self.cq_size {
                self.cq_head = 0;
                self.phase = !self.phase;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_sizes_and_round_trip() {
        let e = SubmissionEntry::io(opcode::READ, 0xbeef, 0x1_2345_6789, 256, 0x1000, 0x2000);
        let b = e.encode();
        assert_eq!(b.len(), 64);
        assert_eq!(b[0], 0x02);
        assert_eq!(&b[2..4], &[0xef, 0xbe]);
        let d = SubmissionEntry::decode(&b);
        assert_eq!(d, e);
        assert_eq!((d.slba(), d.sectors()), (0x1_2345_6789, 256));
        let c = CompletionEntry {
            dw0: 7,
            sq_head: 3,
            sq_id: 1,
            cid: 9,
            status: Status::LBA_OUT_OF_RANGE,
            phase: true,
        };
        let cb = c.encode();
        assert_eq!(cb.len(), 16);
        assert_eq!(u16::from_le_bytes([cb[14], cb[15]]), (0x80 << 1) | 1);
        assert_eq!(CompletionEntry::decode(&cb), c);
    }

    fn sq(size: u32) -> SubmissionQueue {
        SubmissionQueue {
            qid: 1,
            base: 0,
            size,
            head: 0,
            tail: 0,
            cqid: 1,
        }
    }

    #[test]
    fn doorbell_counts() {
        let mut q = sq(8);
        assert_eq!(q.ring(1).unwrap(), 1);
        assert_eq!(q.ring(1).unwrap(), 0);
        let mut w = sq(8);
        w.head = 6;
        w.tail = 6;
        assert_eq!(w.ring(2).unwrap(), 4);
    }

    #[test]
    fn doorbell_overflow_faults() {
        let mut q = sq(8);
        q.ring(7).unwrap();
        assert!(q.ring(0).is_err());
        assert!(q.ring(9).is_err());
    }

    #[test]
    fn phase_tag_survives_wraps() {
        let mut mem = HostMemory::new();
        let mut host = HostQueuePair::new(&mut mem, 1, 4);
        let mut ctrl = NvmeController::new(Arbitration::Rr, mem.alloc(64 * 2), mem.alloc(16 * 2), 2);
        ctrl.create_cq(1, host.cq_base, 4).unwrap();
        ctrl.create_sq(1, host.sq_base, 4, 1, 1).unwrap();
        let mut seen = 0u32;
        for round in 0..50u16 {
            for k in 0..3u16 {
                let t = host
                    .push(&mut mem, &SubmissionEntry::flush(round * 3 + k))
                    .unwrap();
                ctrl.ring_sq(1, t).unwrap();
            }
            for _ in 0..3 {
                let (q, e) = ctrl.fetch(&mem).unwrap().unwrap();
                ctrl.complete(&mut mem, q, e.cid, Status::SUCCESS, 0).unwrap();
            }
            let got = host.poll(&mem).unwrap();
            assert_eq!(got.len(), 3);
            for (k, e) in got.iter().enumerate() {
                assert_eq!(e.cid, round * 3 + k as u16);
                seen += 1;
            }
            ctrl.ring_cq(&mut mem, 1, host.cq_head).unwrap();
        }
        assert_eq!(seen, 150);
    }

    #[test]
    fn full_cq_backlogs() {
        let mut mem = HostMemory::new();
        let mut host = HostQueuePair::new(&mut mem, 1, 2);
        let mut ctrl = NvmeController::new(Arbitration::Rr, mem.alloc(128), mem.alloc(32), 2);
        ctrl.create_cq(1, host.cq_base, 2).unwrap();
        ctrl.create_sq(1, host.sq_base, 4, 1, 1).unwrap();
        assert!(ctrl.complete(&mut mem, 1, 1, Status::SUCCESS, 0).unwrap());
        assert!(!ctrl.complete(&mut mem, 1, 2, Status::SUCCESS, 0).unwrap());
        assert_eq!(host.poll(&mem).unwrap().len(), 1);
        assert_eq!(ctrl.ring_cq(&mut mem, 1, host.cq_head).unwrap(), 1);
        assert_eq!(host.poll(&mem).unwrap()[0].cid, 2);
    }

    #[test]
    fn admin_queue_rules() {
        let mut ctrl = NvmeController::new(Arbitration::Rr, 0x1000, 0x2000, 2);
        assert_eq!(ctrl.create_sq(2, 0, 8, 5, 1), Err(Status::INVALID_QUEUE_ID.into()));
        assert_eq!(ctrl.create_cq(2, 0, 1), Err(Status::INVALID_QUEUE_SIZE.into()));
        ctrl.create_cq(2, 0, 8).unwrap();
        ctrl.create_sq(2, 0, 8, 2, 1).unwrap();
        assert!(ctrl.delete_cq(2).is_err());
        ctrl.delete_sq(2).unwrap();
        ctrl.delete_cq(2).unwrap();
    }
}
