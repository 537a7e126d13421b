//! Experiment orchestration: expands sweeps, runs each point on a fresh
//! simulator and writes the reports plus a manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, ReportFormat, SweepPoint};
use crate::device::SimFault;
use crate::metrics::{MetricsError, PointReport, Report};
use crate::sim::{run_experiment, RunResult};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("sweep point {index} ({label}): {fault}")]
    Sim {
        index: usize,
        label: String,
        fault: SimFault,
    },
    #[error(transparent)]
    Output(#[from] MetricsError),
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub points: Vec<String>,
    pub outputs: Vec<PathBuf>,
    /// Host wall-clock time of the whole run; the only nondeterministic
    /// value written.
    pub wall_clock_s: f64,
}

fn write(path: &Path, text: &str) -> Result<(), MetricsError> {
    std::fs::write(path, text).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run_point(p: &SweepPoint, transaction_log: bool) -> Result<RunResult, RunError> {
    run_experiment(&p.config, transaction_log).map_err(|fault| RunError::Sim {
        index: p.index,
        label: p.label.clone(),
        fault,
    })
}

/// Runs every point of `cfg`, `jobs` at a time. Each point owns its
/// simulator, so results do not depend on `jobs`.
pub fn run_points(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<(SweepPoint, RunResult)>, RunError> {
    let points = cfg.points()?;
    let log = cfg.output.transaction_log;
    let jobs = jobs.max(1);
    let mut results: Vec<Option<Result<RunResult, RunError>>> = (0..points.len()).map(|_| None).collect();
    if jobs == 1 {
        for (p, slot) in points.iter().zip(results.iter_mut()) {
            *slot = Some(run_point(p, log));
        }
    } else {
        let chunk = points.len().div_ceil(jobs).max(1);
        std::thread::scope(|s| {
            for (ps, rs) in points.chunks(chunk).zip(results.chunks_mut(chunk)) {
                s.spawn(move || {
                    for (p, slot) in ps.iter().zip(rs.iter_mut()) {
                        *slot = Some(run_point(p, log));
                    }
                });
            }
        });
    }
    points
        .into_iter()
        .zip(results)
        .map(|(p, r)| r.expect("every point ran").map(|r| (p, r)))
        .collect()
}

/// Runs `cfg` and writes its reports to `out`.
pub fn run_to_dir(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<(Report, Manifest), RunError> {
    let started = Instant::now();
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(ConfigError::Invalid(problems).into());
    }
    std::fs::create_dir_all(out).map_err(|source| MetricsError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let results = run_points(cfg, jobs)?;
    let mut outputs = Vec::new();
    let mut report = Report::default();
    for (p, r) in &results {
        if cfg.output.command_records {
            let name = PathBuf::from(format!("point-{}-commands.csv", p.index));
            let mut w = csv::Writer::from_writer(Vec::new());
            for rec in &r.output.records {
                w.serialize(rec).expect("in-memory write");
            }
            let text = String::from_utf8(w.into_inner().expect("flush")).expect("utf8");
            write(&out.join(&name), &text)?;
            outputs.push(name);
        }
        if cfg.output.transaction_log {
            let name = PathBuf::from(format!("point-{}-flash.log", p.index));
            let mut text = String::new();
            for t in &r.output.flash_log {
                text.push_str(&format!(
                    "{} {:?} {} {} {} {}\n",
                    t.issued_at.as_ps(),
                    t.kind,
                    t.address,
                    t.cell_start.as_ps(),
                    t.done_at.as_ps(),
                    t.payload_len
                ));
            }
            write(&out.join(&name), &text)?;
            outputs.push(name);
        }
        report.points.push(PointReport {
            index: p.index,
            label: p.label.clone(),
            params: p.params.clone(),
            summary: r.summary.clone(),
        });
    }
    for f in &cfg.output.formats {
        let name = PathBuf::from(match f {
            ReportFormat::Csv => "summary.csv",
            ReportFormat::Json => "report.json",
        });
        match f {
            ReportFormat::Csv => report.write_csv(&out.join(&name))?,
            ReportFormat::Json => report.write_json(&out.join(&name))?,
        }
        outputs.push(name);
    }
    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        points: report.points.iter().map(|p| p.label.clone()).collect(),
        outputs,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write(&out.join("manifest.json"), &text)?;
    Ok((report, manifest))
}
