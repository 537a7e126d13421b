//! Per-command records, run summaries, table-driven energy and report
//! export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{HilStats, IoOp};
use crate::flash::FlashStats;
use crate::ftl::FtlStats;
use crate::icl::IclStats;
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("command {id}: timestamps out of order ({detail})")]
    TimestampInversion { id: u64, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

/// Lifecycle of one host command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub id: u64,
    pub op: IoOp,
    pub bytes: u64,
    pub ok: bool,
    /// Host placed the command in its queue.
    pub submit: SimTime,
    /// Device started fetching it.
    pub fetch_start: SimTime,
    pub fetched: SimTime,
    /// Data staged in device DRAM (reads) or received from the host (writes).
    pub mid: SimTime,
    pub fw_done: SimTime,
    /// Host observed the completion.
    pub complete: SimTime,
}

impl CommandRecord {
    pub fn latency(&self) -> SimTime {
        self.complete - self.submit
    }

    fn check(&self) -> Result<(), MetricsError> {
        let stages = [
            ("submit", self.submit),
            ("fetch_start", self.fetch_start),
            ("fetched", self.fetched),
            ("mid", self.mid),
            ("fw_done", self.fw_done),
            ("complete", self.complete),
        ];
        for w in stages.windows(2) {
            if w[0].1 > w[1].1 {
                return Err(MetricsError::TimestampInversion {
                    id: self.id,
                    detail: format!("{} {} > {} {}", w[0].0, w[0].1, w[1].0, w[1].1),
                });
            }
        }
        Ok(())
    }

    /// (queue, fetch, backend, dma, completion) intervals; they sum to the
    /// latency exactly.
    pub fn stages(&self) -> [SimTime; 5] {
        let queue = self.fetch_start - self.submit;
        let fetch = self.fetched - self.fetch_start;
        let first = self.mid - self.fetched;
        let second = self.fw_done - self.mid;
        let completion = self.complete - self.fw_done;
        // reads gather data then transfer it; writes transfer then stage
        let (backend, dma) = if self.op.is_write() {
            (second, first)
        } else {
            (first, second)
        };
        [queue, fetch, backend, dma, completion]
    }
}

#[derive(Default)]
pub struct Recorder {
    records: Vec<CommandRecord>,
}

impl Recorder {
    pub fn new() -> Self {
        Recorder::default()
    }

    pub fn record(&mut self, r: CommandRecord) -> Result<(), MetricsError> {
        r.check()?;
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[CommandRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<CommandRecord> {
        self.records
    }
}

/// Idle power per component in milliwatts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdlePower {
    pub flash_mw: f64,
    pub dram_mw: f64,
    pub controller_mw: f64,
}

impl Default for IdlePower {
    fn default() -> Self {
        IdlePower {
            flash_mw: 300.0,
            dram_mw: 90.0,
            controller_mw: 500.0,
        }
    }
}

/// Energy per operation in nanojoules. The defaults are placeholder orders
/// of magnitude for MLC NAND and DDR3L, not measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyTable {
    pub flash_read_nj: f64,
    pub flash_program_nj: f64,
    pub flash_erase_nj: f64,
    pub dram_burst_nj: f64,
    pub idle: IdlePower,
}

impl Default for EnergyTable {
    fn default() -> Self {
        EnergyTable {
            flash_read_nj: 5_000.0,
            flash_program_nj: 60_000.0,
            flash_erase_nj: 150_000.0,
            dram_burst_nj: 0.5,
            idle: IdlePower::default(),
        }
    }
}

impl EnergyTable {
    pub fn validate(&self) -> Vec<String> {
        [
            ("flash_read_nj", self.flash_read_nj),
            ("flash_program_nj", self.flash_program_nj),
            ("flash_erase_nj", self.flash_erase_nj),
            ("dram_burst_nj", self.dram_burst_nj),
            ("idle.flash_mw", self.idle.flash_mw),
            ("idle.dram_mw", self.idle.dram_mw),
            ("idle.controller_mw", self.idle.controller_mw),
        ]
        .iter()
        .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
        .map(|(n, v)| format!("energy.{n} = {v} must be non-negative"))
        .collect()
    }

    pub fn scaled(&self, k: f64) -> EnergyTable {
        EnergyTable {
            flash_read_nj: self.flash_read_nj * k,
            flash_program_nj: self.flash_program_nj * k,
            flash_erase_nj: self.flash_erase_nj * k,
            dram_burst_nj: self.dram_burst_nj * k,
            idle: IdlePower {
                flash_mw: self.idle.flash_mw * k,
                dram_mw: self.idle.dram_mw * k,
                controller_mw: self.idle.controller_mw * k,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub flash_read_j: f64,
    pub flash_program_j: f64,
    pub flash_erase_j: f64,
    pub dram_j: f64,
    pub idle_j: f64,
}

impl Energy {
    pub fn compute(t: &EnergyTable, flash: &FlashStats, dram_bursts: u64, span: SimTime) -> Energy {
        let nj = 1e-9;
        Energy {
            flash_read_j: flash.reads as f64 * t.flash_read_nj * nj,
            flash_program_j: flash.programs as f64 * t.flash_program_nj * nj,
            flash_erase_j: flash.erases as f64 * t.flash_erase_nj * nj,
            dram_j: dram_bursts as f64 * t.dram_burst_nj * nj,
            idle_j: (t.idle.flash_mw + t.idle.dram_mw + t.idle.controller_mw) * 1e-3 * span.as_secs_f64(),
        }
    }

    pub fn dynamic(&self) -> f64 {
        self.flash_read_j + self.flash_program_j + self.flash_erase_j + self.dram_j
    }

    pub fn total(&self) -> f64 {
        self.dynamic() + self.idle_j
    }
}

/// Device counters accumulated over the measured part of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub flash: FlashStats,
    pub dram_bursts: u64,
    pub ftl: FtlStats,
    pub icl: IclStats,
    pub hil: HilStats,
    /// Erase count of every physical block at the end of the run.
    pub erase_counts: Vec<u32>,
    pub page_bytes: u64,
    /// Simulated time covered by the counters.
    pub span: SimTime,
}

const MIB: f64 = 1024.0 * 1024.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// True when no command was measured.
    pub empty: bool,
    pub commands: u64,
    pub measured: u64,
    pub errors: u64,
    pub span_us: f64,
    pub read_bytes: u64,
    pub write_bytes: u64,
    /// MiB/s over the measured window.
    pub bandwidth_mb_s: f64,
    pub read_bandwidth_mb_s: f64,
    pub write_bandwidth_mb_s: f64,
    pub iops: f64,
    pub lat_mean_us: f64,
    pub lat_p50_us: f64,
    pub lat_p95_us: f64,
    pub lat_p99_us: f64,
    pub lat_max_us: f64,
    pub t_queue_us: f64,
    pub t_fetch_us: f64,
    pub t_backend_us: f64,
    pub t_dma_us: f64,
    pub t_completion_us: f64,
    pub gc_invocations: u64,
    pub gc_episodes: u64,
    pub migrated_pages: u64,
    pub erases: u64,
    pub erase_min: u32,
    pub erase_max: u32,
    pub write_amplification: f64,
    pub host_write_bytes: u64,
    pub flash_program_bytes: u64,
    pub flash_reads: u64,
    pub flash_programs: u64,
    pub cache_hit_ratio: f64,
    pub prefetch_lines: u64,
    pub partial_remaps: u64,
    pub rmw_writes: u64,
    pub dma_bytes: u64,
    pub energy_flash_j: f64,
    pub energy_dram_j: f64,
    pub energy_idle_j: f64,
    pub energy_total_j: f64,
    pub sim_time_us: f64,
    /// (erase count, blocks) pairs in ascending erase count.
    pub erase_histogram: Vec<(u32, u64)>,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[SimTime], p: f64) -> SimTime {
    if sorted.is_empty() {
        return SimTime::ZERO;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Aggregates `records` (in completion order) after skipping the first
/// `ramp_up`, together with whole-run device counters.
pub fn summarize(records: &[CommandRecord], ramp_up: usize, c: &Counters, energy: &EnergyTable) -> RunSummary {
    let window = &records[ramp_up.min(records.len())..];
    let mut s = RunSummary {
        empty: window.is_empty(),
        commands: records.len() as u64,
        measured: window.len() as u64,
        errors: records.iter().filter(|r| !r.ok).count() as u64,
        ..RunSummary::default()
    };

    if !window.is_empty() {
        // the window opens when the last ramp-up command completes, so
        // commands queued during ramp-up do not stretch the span
        let start = match ramp_up.min(records.len()) {
            0 => window.iter().map(|r| r.submit).min().unwrap(),
            k => records[k - 1].complete,
        };
        let end = window.iter().map(|r| r.complete).max().unwrap();
        let span = end - start;
        s.span_us = span.as_us_f64();
        for r in window.iter().filter(|r| r.ok) {
            if r.op.is_write() {
                s.write_bytes += r.bytes;
            } else if r.op.is_read() {
                s.read_bytes += r.bytes;
            }
        }
        let secs = span.as_secs_f64();
        if secs > 0.0 {
            s.bandwidth_mb_s = (s.read_bytes + s.write_bytes) as f64 / MIB / secs;
            s.read_bandwidth_mb_s = s.read_bytes as f64 / MIB / secs;
            s.write_bandwidth_mb_s = s.write_bytes as f64 / MIB / secs;
            s.iops = window.len() as f64 / secs;
        }
        let mut lat: Vec<SimTime> = window.iter().map(|r| r.latency()).collect();
        lat.sort_unstable();
        let total_ps: u128 = lat.iter().map(|l| l.as_ps() as u128).sum();
        let n = window.len() as f64;
        s.lat_mean_us = total_ps as f64 / n / 1e6;
        s.lat_p50_us = percentile(&lat, 50.0).as_us_f64();
        s.lat_p95_us = percentile(&lat, 95.0).as_us_f64();
        s.lat_p99_us = percentile(&lat, 99.0).as_us_f64();
        s.lat_max_us = lat.last().unwrap().as_us_f64();
        let mut stage = [0u128; 5];
        for r in window {
            for (acc, t) in stage.iter_mut().zip(r.stages()) {
                *acc += t.as_ps() as u128;
            }
        }
        let mean = |v: u128| v as f64 / n / 1e6;
        s.t_queue_us = mean(stage[0]);
        s.t_fetch_us = mean(stage[1]);
        s.t_backend_us = mean(stage[2]);
        s.t_dma_us = mean(stage[3]);
        s.t_completion_us = mean(stage[4]);
    }

    s.gc_invocations = c.ftl.gc_invocations;
    s.gc_episodes = c.ftl.gc_episodes;
    s.migrated_pages = c.ftl.gc_programs;
    s.erases = c.flash.erases;
    s.host_write_bytes = c.hil.write_bytes;
    s.flash_program_bytes = c.flash.program_bytes;
    s.flash_reads = c.flash.reads;
    s.flash_programs = c.flash.programs;
    s.write_amplification = if c.hil.write_bytes == 0 {
        0.0
    } else {
        c.flash.program_bytes as f64 / c.hil.write_bytes as f64
    };
    s.cache_hit_ratio = c.icl.hit_ratio();
    s.prefetch_lines = c.icl.prefetch_lines;
    s.partial_remaps = c.ftl.partial_remaps;
    s.rmw_writes = c.ftl.rmw_writes;
    s.dma_bytes = c.hil.dma_bytes;
    s.sim_time_us = c.span.as_us_f64();

    let mut hist: BTreeMap<u32, u64> = BTreeMap::new();
    for e in &c.erase_counts {
        *hist.entry(*e).or_default() += 1;
    }
    s.erase_min = hist.keys().next().copied().unwrap_or(0);
    s.erase_max = hist.keys().last().copied().unwrap_or(0);
    s.erase_histogram = hist.into_iter().collect();

    let e = Energy::compute(energy, &c.flash, c.dram_bursts, c.span);
    s.energy_flash_j = e.flash_read_j + e.flash_program_j + e.flash_erase_j;
    s.energy_dram_j = e.dram_j;
    s.energy_idle_j = e.idle_j;
    s.energy_total_j = e.total();
    s
}

impl RunSummary {
    /// Scalar fields in their stable export order.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        macro_rules! f {
            ($($name:ident),* $(,)?) => {
                vec![$((stringify!($name), self.$name.to_string())),*]
            };
        }
        f![
            empty,
            commands,
            measured,
            errors,
            span_us,
            read_bytes,
            write_bytes,
            bandwidth_mb_s,
            read_bandwidth_mb_s,
            write_bandwidth_mb_s,
            iops,
            lat_mean_us,
            lat_p50_us,
            lat_p95_us,
            lat_p99_us,
            lat_max_us,
            t_queue_us,
            t_fetch_us,
            t_backend_us,
            t_dma_us,
            t_completion_us,
            gc_invocations,
            gc_episodes,
            migrated_pages,
            erases,
            erase_min,
            erase_max,
            write_amplification,
            host_write_bytes,
            flash_program_bytes,
            flash_reads,
            flash_programs,
            cache_hit_ratio,
            prefetch_lines,
            partial_remaps,
            rmw_writes,
            dma_bytes,
            energy_flash_j,
            energy_dram_j,
            energy_idle_j,
            energy_total_j,
            sim_time_us,
        ]
    }
}

/// One sweep point of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub index: usize,
    pub label: String,
    /// Swept parameter values for this point.
    pub params: BTreeMap<String, String>,
    pub summary: RunSummary,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub points: Vec<PointReport>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
    move |source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// CSV with one row per sweep point: index, label, then summary fields.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["index".to_string(), "label".to_string()];
        let names = RunSummary::default().fields();
        header.extend(names.iter().map(|(n, _)| n.to_string()));
        w.write_record(&header).expect("in-memory write");
        for p in &self.points {
            let mut row = vec![p.index.to_string(), p.label.clone()];
            row.extend(p.summary.fields().into_iter().map(|(_, v)| v));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn write_json(&self, path: &Path) -> Result<(), MetricsError> {
        std::fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), MetricsError> {
        std::fs::write(path, self.to_csv()).map_err(io_err(path))
    }

    pub fn read_json(path: &Path) -> Result<Report, MetricsError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| MetricsError::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    /// Parses a CSV written by [`Report::to_csv`] into rows of named fields.
    pub fn parse_csv(text: &str) -> Result<Vec<Vec<(String, String)>>, csv::Error> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        r.records()
            .map(|rec| {
                rec.map(|rec| {
                    header
                        .iter()
                        .cloned()
                        .zip(rec.iter().map(String::from))
                        .collect()
                })
            })
            .collect()
    }
}

/// One metric of a comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Delta {
    pub point: usize,
    pub metric: String,
    pub a: f64,
    pub b: f64,
    pub abs: f64,
    /// (b - a) / |a|; zero when both are zero, infinite when only `a` is.
    pub rel: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompareError {
    #[error("reports have {0} and {1} sweep points")]
    PointCount(usize, usize),
    #[error("point {point}: metric sets differ")]
    Schema { point: usize },
}

/// Per-metric deltas between two reports with the same shape.
pub fn compare(a: &Report, b: &Report) -> Result<Vec<Delta>, CompareError> {
    if a.points.len() != b.points.len() {
        return Err(CompareError::PointCount(a.points.len(), b.points.len()));
    }
    let mut out = Vec::new();
    for (i, (pa, pb)) in a.points.iter().zip(&b.points).enumerate() {
        let fa = pa.summary.fields();
        let fb = pb.summary.fields();
        if fa.iter().map(|f| f.0).ne(fb.iter().map(|f| f.0)) {
            return Err(CompareError::Schema { point: i });
        }
        for ((name, va), (_, vb)) in fa.into_iter().zip(fb) {
            let num = |v: &str| match v {
                "true" => 1.0,
                "false" => 0.0,
                v => v.parse::<f64>().unwrap_or(0.0),
            };
            let (x, y) = (num(&va), num(&vb));
            let abs = y - x;
            let rel = if abs == 0.0 {
                0.0
            } else if x == 0.0 {
                f64::INFINITY.copysign(abs)
            } else {
                abs / x.abs()
            };
            out.push(Delta {
                point: i,
                metric: name.to_string(),
                a: x,
                b: y,
                abs,
                rel,
            });
        }
    }
    Ok(out)
}

pub fn format_deltas(d: &[Delta]) -> String {
    let mut s = format!("{:>5} {:<24} {:>16} {:>16} {:>16} {:>10}\n", "point", "metric", "a", "b", "delta", "rel");
    for x in d {
        s.push_str(&format!(
            "{:>5} {:<24} {:>16.6} {:>16.6} {:>16.6} {:>9.2}%\n",
            x.point,
            x.metric,
            x.a,
            x.b,
            x.abs,
            x.rel * 100.0
        ));
    }
    s
}
