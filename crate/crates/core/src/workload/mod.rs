//! The simulated host's workloads: FIO-style synthetic generators, trace
//! replay, preconditioning modes and deterministic payloads.

pub mod host_ftl;
pub mod trace;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hil::SECTOR;

pub use host_ftl::HostFtl;
pub use trace::{parse_trace, TraceError, TraceProfile, TraceRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    SeqRead,
    RandRead,
    SeqWrite,
    RandWrite,
    /// Bernoulli mix of random reads and writes at `read_ratio`.
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayMode {
    /// Issue at recorded timestamps regardless of completions (open loop).
    Timed,
    /// Ignore timestamps and keep `queue_depth` commands in flight.
    ClosedLoop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precondition {
    None,
    /// Sequentially write the whole logical range once.
    Fill,
    /// Fill, then randomly overwrite the whole range once more.
    Stress,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    /// Seed-derived bytes, unique per sector and write.
    Pattern,
    /// All-zero payloads; cheap and stored without page contents.
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub pattern: Pattern,
    pub read_ratio: f64,
    pub block_bytes: u64,
    pub queue_depth: u32,
    pub total_ops: Option<u64>,
    /// Stop issuing once simulated time passes this many microseconds.
    pub duration_us: Option<f64>,
    pub offset_bytes: u64,
    /// Size of the address range; defaults to the rest of the device.
    pub range_bytes: Option<u64>,
    /// Trace file replayed instead of the synthetic pattern.
    pub trace: Option<PathBuf>,
    pub replay: ReplayMode,
    pub precondition: Precondition,
    pub payload: PayloadKind,
    /// Check every read against the expected payloads.
    pub verify: bool,
    /// Commands excluded from the summary; defaults to max(10%, 100) capped
    /// at half the run.
    pub ramp_up_commands: Option<u64>,
    /// Background GC gets this idle window in timed replay.
    pub idle_gc_window_us: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            pattern: Pattern::RandRead,
            read_ratio: 0.5,
            block_bytes: 4096,
            queue_depth: 1,
            total_ops: Some(1000),
            duration_us: None,
            offset_bytes: 0,
            range_bytes: None,
            trace: None,
            replay: ReplayMode::ClosedLoop,
            precondition: Precondition::None,
            payload: PayloadKind::Zero,
            verify: false,
            ramp_up_commands: None,
            idle_gc_window_us: 1000.0,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.block_bytes == 0 || !self.block_bytes.is_multiple_of(SECTOR) {
            bad.push(format!(
                "workload.block_bytes {} must be a positive multiple of 512",
                self.block_bytes
            ));
        }
        if self.block_bytes > 65536 * SECTOR {
            bad.push(format!("workload.block_bytes {} exceeds 32 MiB", self.block_bytes));
        }
        if self.queue_depth == 0 {
            bad.push("workload.queue_depth must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.read_ratio) {
            bad.push(format!("workload.read_ratio {} must be in [0, 1]", self.read_ratio));
        }
        if !self.offset_bytes.is_multiple_of(SECTOR) {
            bad.push("workload.offset_bytes must be a multiple of 512".into());
        }
        if self.total_ops.is_none() && self.duration_us.is_none() && self.trace.is_none() {
            bad.push("workload needs total_ops, duration_us or a trace".into());
        }
        if let Some(d) = self.duration_us {
            if !(d > 0.0) {
                bad.push("workload.duration_us must be positive".into());
            }
        }
        if !(self.idle_gc_window_us > 0.0) {
            bad.push("workload.idle_gc_window_us must be positive".into());
        }
        bad
    }

    /// Default ramp-up exclusion for a run of `n` commands.
    pub fn ramp_up(&self, n: u64) -> u64 {
        self.ramp_up_commands
            .unwrap_or_else(|| (n / 10).max(100))
            .min(n / 2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HostOp {
    Read,
    Write,
}

/// One host-level I/O in bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HostIo {
    pub op: HostOp,
    pub offset: u64,
    pub len: u64,
}

/// Seeded FIO-style generator. Random offsets are aligned to the block size.
pub struct Synthetic {
    spec: WorkloadSpec,
    rng: ChaCha8Rng,
    base: u64,
    blocks: u64,
    cursor: u64,
    issued: u64,
}

impl Synthetic {
    /// `capacity` is the device's exported size in bytes.
    pub fn new(spec: &WorkloadSpec, capacity: u64, seed: u64) -> Self {
        let base = spec.offset_bytes.min(capacity);
        let range = spec
            .range_bytes
            .unwrap_or(capacity - base)
            .min(capacity - base);
        Synthetic {
            spec: spec.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            base,
            blocks: (range / spec.block_bytes).max(1),
            cursor: 0,
            issued: 0,
        }
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    /// Next request, or `None` once `total_ops` have been produced.
    pub fn next_io(&mut self) -> Option<HostIo> {
        if self.spec.total_ops.is_some_and(|n| self.issued >= n) {
            return None;
        }
        self.issued += 1;
        let bs = self.spec.block_bytes;
        let (op, sequential) = match self.spec.pattern {
            Pattern::SeqRead => (HostOp::Read, true),
            Pattern::RandRead => (HostOp::Read, false),
            Pattern::SeqWrite => (HostOp::Write, true),
            Pattern::RandWrite => (HostOp::Write, false),
            Pattern::Mixed => {
                let read = self.rng.gen_bool(self.spec.read_ratio);
                (if read { HostOp::Read } else { HostOp::Write }, false)
            }
        };
        let block = if sequential {
            let b = self.cursor;
            self.cursor = (self.cursor + 1) % self.blocks;
            b
        } else {
            self.rng.gen_range(0..self.blocks)
        };
        Some(HostIo {
            op,
            offset: self.base + block * bs,
            len: bs,
        })
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fills `out` (a whole number of sectors) with the payload of write
/// `generation` starting at `sector`.
pub fn fill_payload(seed: u64, sector: u64, generation: u64, out: &mut [u8]) {
    for (i, s) in out.chunks_mut(SECTOR as usize).enumerate() {
        let mut state = splitmix64(seed ^ splitmix64((sector + i as u64) ^ (generation << 40)));
        for w in s.chunks_mut(8) {
            state = splitmix64(state);
            w.copy_from_slice(&state.to_le_bytes()[..w.len()]);
        }
    }
}

/// Expected device contents: the generation of the last write to each
/// sector. Unwritten sectors read as zero.
#[derive(Default)]
pub struct Shadow {
    seed: u64,
    zero: bool,
    gens: std::collections::HashMap<u64, u64>,
    pub mismatches: u64,
    pub checked_reads: u64,
}

impl Shadow {
    pub fn new(seed: u64, kind: PayloadKind) -> Self {
        Shadow {
            seed,
            zero: kind == PayloadKind::Zero,
            ..Shadow::default()
        }
    }

    pub fn payload(&self, sector: u64, generation: u64, out: &mut [u8]) {
        if self.zero {
            out.fill(0);
        } else {
            fill_payload(self.seed, sector, generation, out);
        }
    }

    pub fn record_write(&mut self, sector: u64, sectors: u64, generation: u64) {
        for s in sector..sector + sectors {
            self.gens.insert(s, generation);
        }
    }

    /// Compares `data` read from `sector` with the expected contents.
    pub fn check(&mut self, sector: u64, data: &[u8]) -> bool {
        self.checked_reads += 1;
        let mut want = [0u8; SECTOR as usize];
        let ok = data.chunks(SECTOR as usize).enumerate().all(|(i, got)| {
            let s = sector + i as u64;
            match self.gens.get(&s) {
                Some(&g) => {
                    self.payload(s, g, &mut want);
                    got == want
                }
                None => got.iter().all(|b| *b == 0),
            }
        });
        if !ok {
            self.mismatches += 1;
        }
        ok
    }
}
