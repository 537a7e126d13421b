//! Block traces.
//!
//! Native format, one record per line:
//!
//! ```text
//! timestamp_us lba_512 length_bytes R|W
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Timestamps are
//! microseconds from the start of the trace and must not decrease.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::HostOp;
use crate::hil::SECTOR;
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub timestamp: SimTime,
    pub lba: u64,
    pub length_bytes: u64,
    pub op: HostOp,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trace line {line}: {msg}")]
pub struct TraceError {
    pub line: usize,
    pub msg: String,
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out: Vec<TraceRecord> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let err = |msg: String| TraceError { line, msg };
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", f.len())));
        }
        let ts: f64 = f[0]
            .parse()
            .map_err(|_| err(format!("bad timestamp {:?}", f[0])))?;
        if !(ts >= 0.0 && ts.is_finite()) {
            return Err(err(format!("timestamp {ts} must be non-negative")));
        }
        let lba: u64 = f[1].parse().map_err(|_| err(format!("bad lba {:?}", f[1])))?;
        let len: u64 = f[2]
            .parse()
            .map_err(|_| err(format!("bad length {:?}", f[2])))?;
        if len == 0 || !len.is_multiple_of(SECTOR) {
            return Err(err(format!("length {len} must be a positive multiple of 512")));
        }
        let op = match f[3] {
            "R" | "r" => HostOp::Read,
            "W" | "w" => HostOp::Write,
            o => return Err(err(format!("op {o:?} is not R or W"))),
        };
        let timestamp = SimTime::from_us_f64(ts);
        if out.last().is_some_and(|p| p.timestamp > timestamp) {
            return Err(err("timestamp goes backwards".into()));
        }
        out.push(TraceRecord {
            timestamp,
            lba,
            length_bytes: len,
            op,
        });
    }
    Ok(out)
}

pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&format!(
            "{:.3} {} {} {}\n",
            r.timestamp.as_us_f64(),
            r.lba,
            r.length_bytes,
            if r.op == HostOp::Read { 'R' } else { 'W' }
        ));
    }
    s
}

/// Converts an MSR-Cambridge style CSV trace
/// (`Timestamp,Hostname,DiskNumber,Type,Offset,Size,ResponseTime`, timestamps
/// in 100 ns Windows ticks, byte offsets) into the native format. Sizes are
/// rounded up to whole sectors and timestamps rebased to the first record.
pub fn convert_msr_csv(text: &str) -> Result<String, TraceError> {
    let mut first: Option<u64> = None;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        let err = |msg: &str| TraceError {
            line,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() < 6 {
            return Err(err("expected at least 6 comma-separated fields"));
        }
        let ticks: u64 = f[0].parse().map_err(|_| err("bad timestamp"))?;
        let base = *first.get_or_insert(ticks);
        let op = match f[3].to_ascii_lowercase().as_str() {
            "read" => HostOp::Read,
            "write" => HostOp::Write,
            _ => return Err(err("type must be Read or Write")),
        };
        let offset: u64 = f[4].parse().map_err(|_| err("bad offset"))?;
        let size: u64 = f[5].parse().map_err(|_| err("bad size"))?;
        let start = offset / SECTOR;
        let end = (offset + size.max(1)).div_ceil(SECTOR);
        out.push(TraceRecord {
            timestamp: SimTime::from_ns(ticks.saturating_sub(base) * 100),
            lba: start,
            length_bytes: (end - start) * SECTOR,
            op,
        });
    }
    out.sort_by_key(|r| r.timestamp);
    Ok(format_trace(&out))
}

/// Summary statistics of an enterprise block trace, used to synthesize a
/// stand-in with the same mix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceProfile {
    pub avg_read_kb: f64,
    pub avg_write_kb: f64,
    pub read_ratio: f64,
    pub random_read: f64,
    pub random_write: f64,
}

impl TraceProfile {
    pub const AUTH_SERVER_24HR: TraceProfile = TraceProfile {
        avg_read_kb: 10.3,
        avg_write_kb: 8.1,
        read_ratio: 0.10,
        random_read: 0.97,
        random_write: 0.47,
    };
    pub const SQL_BACKEND_24HRS: TraceProfile = TraceProfile {
        avg_read_kb: 106.2,
        avg_write_kb: 11.7,
        read_ratio: 0.18,
        random_read: 0.92,
        random_write: 0.43,
    };
    pub const MSN_METADATA_CFS: TraceProfile = TraceProfile {
        avg_read_kb: 8.7,
        avg_write_kb: 12.6,
        read_ratio: 0.74,
        random_read: 0.94,
        random_write: 0.94,
    };
    pub const MSN_FS: TraceProfile = TraceProfile {
        avg_read_kb: 10.7,
        avg_write_kb: 11.2,
        read_ratio: 0.67,
        random_read: 0.98,
        random_write: 0.98,
    };
    pub const ADS_PAYLOAD_DAP: TraceProfile = TraceProfile {
        avg_read_kb: 62.1,
        avg_write_kb: 97.2,
        read_ratio: 0.56,
        random_read: 0.03,
        random_write: 0.84,
    };

    pub fn by_name(name: &str) -> Option<TraceProfile> {
        Some(match name.to_ascii_lowercase().as_str() {
            "24hr" => Self::AUTH_SERVER_24HR,
            "24hrs" => Self::SQL_BACKEND_24HRS,
            "cfs" => Self::MSN_METADATA_CFS,
            "msnfs" => Self::MSN_FS,
            "dap" => Self::ADS_PAYLOAD_DAP,
            _ => return None,
        })
    }

    /// Generates `n` records over `range_bytes`, spaced `gap_us` apart.
    ///
    /// The read/write choice is drawn per record, so the issued read
    /// fraction converges on `read_ratio`. Lengths are uniform on half to
    /// one and a half times the average, rounded to 4KB. A non-random access continues where the
    /// previous access of the same kind ended.
    pub fn synthesize(&self, n: usize, range_bytes: u64, gap_us: f64, seed: u64) -> Vec<TraceRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = [0u64; 2];
        let sectors = range_bytes / SECTOR;
        (0..n)
            .map(|i| {
                let read = rng.gen_bool(self.read_ratio);
                let (avg, rnd, k) = if read {
                    (self.avg_read_kb, self.random_read, 0)
                } else {
                    (self.avg_write_kb, self.random_write, 1)
                };
                let kb = avg * rng.gen_range(0.5..1.5);
                let len = ((kb / 4.0).round().max(1.0) as u64) * 4096;
                let len_sectors = len / SECTOR;
                let span = sectors.saturating_sub(len_sectors).max(1);
                let lba = if rng.gen_bool(rnd) || next[k] >= span {
                    rng.gen_range(0..span) / 8 * 8
                } else {
                    next[k]
                };
                next[k] = lba + len_sectors;
                TraceRecord {
                    timestamp: SimTime::from_us_f64(i as f64 * gap_us),
                    lba,
                    length_bytes: len,
                    op: if read { HostOp::Read } else { HostOp::Write },
                }
            })
            .collect()
    }
}
